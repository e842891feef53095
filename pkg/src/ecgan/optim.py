"""Adam updates and L2 weight decay over named parameter lists.

State is keyed by parameter name, so the update is invariant to the
order in which parameters are listed. Decay is the coupled form (added
into the gradient before the Adam step) and skips biases and batch-norm
scale/shift by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError


def default_exempt(name: str) -> bool:
    """Biases and batch-norm affine parameters are not decayed."""
    return name.endswith((".b", ".gamma", ".beta"))


@dataclass
class DecayPolicy:
    """L2 penalty strength plus a name predicate for exemptions.

    coefficient 0 leaves gradients bit-exactly untouched.
    """

    coefficient: float = 0.0
    exempt: Callable[[str], bool] = field(default=default_exempt)

    def __post_init__(self):
        if self.coefficient < 0:
            raise ContractError(f"decay coefficient must be >= 0, got {self.coefficient}")


def apply_weight_decay(params, policy):
    """Add coefficient * theta into the gradient of each non-exempt param.

    Parameters without a gradient are skipped; they are not taking part
    in the current step.
    """
    if policy.coefficient == 0:
        return
    for name, p in params:
        if p.grad is None or policy.exempt(name):
            continue
        p.grad += (policy.coefficient * p.data).astype(p.grad.dtype)


class Adam:
    """Adam with bias correction over a list of (name, tensor) pairs.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = [(n, p) for n, p in params if p.requires_grad]
        if len({n for n, _ in self.params}) != len(self.params):
            raise ContractError("duplicate parameter names")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        missing = [n for n, p in self.params if p.grad is None]
        if missing:
            raise ContractError(f"missing gradient for {missing[0]!r} (and {len(missing) - 1} more)")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for n, p in self.params:
            g = p.grad
            m = self.m[n]
            v = self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        """Named arrays for checkpointing (moments; step count separate)."""
        out = {}
        for n, _ in self.params:
            out[f"m/{n}"] = self.m[n].copy()
            out[f"v/{n}"] = self.v[n].copy()
        return out

    def load_state(self, state, step_count):
        for n, p in self.params:
            for kind, store in (("m", self.m), ("v", self.v)):
                key = f"{kind}/{n}"
                if key not in state:
                    raise ContractError(f"optimizer state missing {key!r}")
                arr = np.asarray(state[key], dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise ContractError(f"optimizer state {key!r} has shape {arr.shape}")
                store[n][...] = arr
        self.step_count = int(step_count)
