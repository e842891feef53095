"""Training algorithms: GAN-supplemented classification with confidence
pseudo-labels, a shared two-headed discriminator baseline, a supervised
baseline, and the class-conditional variant.

Per minibatch the update order is discriminator, generator, classifier.
The classifier's loss is CE(C(x), y) + lambda * CE(C(kept fakes),
pseudo-labels): fresh generated images every step, detached from the
generator, kept only where the classifier's own max softmax probability
exceeds the threshold, labeled by argmax. lambda = 0 degenerates exactly
to supervised training.

Randomness is split into independent named streams (data order and
augmentation, per-network init, latent draws) derived from one seed, so
variants sharing a seed see identical real-data batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentPolicy, batches
from .errors import ContractError, SpecError, TrainingDiverged
from .networks import (
    LATENT_DIM,
    NetworkSpec,
    balanced_labels,
    build_classifier,
    build_discriminator,
    build_generator,
    build_shared_discriminator,
    conditional_latent,
    latent,
)
from .optim import Adam, DecayPolicy, apply_weight_decay
from .tensor import (
    Rng,
    Tensor,
    add,
    backward,
    bce,
    cross_entropy,
    no_grad,
    scale,
    softmax,
    take_rows,
)

VARIANTS = ("ecgan", "shared", "baseline", "ecgan_conditional")

GAN_BETAS = (0.5, 0.999)
CLS_BETAS = (0.9, 0.999)


@dataclass
class HyperParams:
    """Training knobs. `lam` is the adversarial weight on the unsupervised
    classifier term (the config file key is "lambda")."""

    lam: float = 0.1
    threshold: float = 0.7
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_c: float = 2e-4
    weight_decay: float = 1e-3
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    variant: str = "ecgan"
    base_width: int = 8
    depth: int = 1
    augment: AugmentPolicy | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise SpecError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.threshold <= 1.0:
            raise SpecError(f"threshold must be in [0,1], got {self.threshold}")
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise SpecError("batch_size and epochs must be >= 1")


@dataclass
class PseudoLabelResult:
    """Rows of a generated batch that cleared the confidence threshold."""

    kept_indices: np.ndarray
    kept_labels: np.ndarray
    keep_rate: float
    max_probs: np.ndarray

    @property
    def count(self):
        return int(self.kept_indices.size)


@dataclass
class StepMetrics:
    loss_d: float = 0.0
    loss_g: float = 0.0
    loss_c_sup: float = 0.0
    loss_c_unsup: float = 0.0
    keep_rate: float = 0.0
    step: int = 0
    epoch: int = 0


def pseudo_label(logits, threshold):
    """Keep rows whose max softmax probability strictly exceeds the
    threshold; the label is the argmax class (lowest index on ties).
    The decision is made on detached values and carries no gradient."""
    if not 0.0 <= threshold <= 1.0:
        raise ContractError(f"threshold must be in [0,1], got {threshold}")
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    with no_grad():
        probs = softmax(Tensor(values)).data
    max_probs = probs.max(axis=1)
    kept = np.flatnonzero(max_probs > threshold)
    labels = probs[kept].argmax(axis=1).astype(np.int64)
    rate = float(kept.size / values.shape[0]) if values.shape[0] else 0.0
    return PseudoLabelResult(kept, labels, rate, max_probs)


def _check_finite(value, step, what):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite ({value})", step=step)
    return float(value)


def _decay_for(hp):
    return DecayPolicy(coefficient=hp.weight_decay)


def _draw_latent(n, num_classes, conditional, rng):
    if conditional:
        return conditional_latent(balanced_labels(n, num_classes), num_classes, rng)
    return latent(n, rng)


def discriminator_step(d, g, real_images, opt_d, rng, step=0, labels=None):
    """One Adam step on D for BCE(D(x),1) + BCE(D(G(z)),0).

    Generated images are detached; G's running stats are left untouched.
    `labels` are the real batch's classes, used only by conditional D
    (the fake half gets the balanced classes encoded in its latents).
    """
    n = real_images.shape[0]
    conditional = d.spec.conditional
    lv = _draw_latent(n, d.spec.num_classes, conditional, rng)
    with no_grad():
        fake = g.forward(lv.values, update_stats=False)
    fake = fake.detach()
    if conditional:
        p_real = d.forward(real_images, labels=labels)
        p_fake = d.forward(fake, labels=lv.conditional_class)
    else:
        p_real = d.forward(real_images)
        p_fake = d.forward(fake)
    loss = add(bce(p_real, 1.0), bce(p_fake, 0.0))
    value = _check_finite(loss.item(), step, "discriminator loss")
    opt_d.zero_grad()
    backward(loss)
    opt_d.step()
    return value


def generator_step(g, d, batch_size, opt_g, rng, step=0):
    """One Adam step on G for BCE(D(G(z)),1).

    Gradients flow through D but only G's parameters move; D's batch-norm
    running stats are frozen during the fake forward.
    """
    conditional = d.spec.conditional
    lv = _draw_latent(batch_size, d.spec.num_classes, conditional, rng)
    fake = g.forward(lv.values)
    if conditional:
        p_fake = d.forward(fake, labels=lv.conditional_class, update_stats=False)
    else:
        p_fake = d.forward(fake, update_stats=False)
    loss = bce(p_fake, 1.0)
    value = _check_finite(loss.item(), step, "generator loss")
    opt_g.zero_grad()
    backward(loss)
    opt_g.step()
    return value


def classifier_step(c, g, batch, hp, opt_c, rng, step=0):
    """One Adam step on C for CE(C(x),y) + lambda * CE on kept fakes.

    Pseudo-labels come from C's start-of-step parameters; a single
    combined backward updates C once. Generated images are detached from
    G, and their forward through C does not touch C's running stats, so
    lambda = 0 and an empty keep set both reproduce the supervised step
    exactly. lambda = 0 skips generation entirely.
    """
    logits_real = c.forward(batch.images)
    sup = cross_entropy(logits_real, batch.labels)
    unsup_value = 0.0
    keep_rate = 0.0
    loss = sup
    if hp.lam > 0:
        n = batch.images.shape[0]
        lv = _draw_latent(n, c.spec.num_classes, g.spec.conditional, rng)
        with no_grad():
            fake = g.forward(lv.values, update_stats=False)
        logits_fake = c.forward(fake.detach(), update_stats=False)
        result = pseudo_label(logits_fake, hp.threshold)
        keep_rate = result.keep_rate
        if result.count:
            kept = take_rows(logits_fake, result.kept_indices)
            unsup = cross_entropy(kept, result.kept_labels)
            unsup_value = unsup.item()
            loss = add(sup, scale(unsup, hp.lam))
    sup_value = _check_finite(sup.item(), step, "classifier loss")
    _check_finite(unsup_value, step, "classifier unsupervised loss")
    opt_c.zero_grad()
    backward(loss)
    apply_weight_decay(c.trainable_parameters(), _decay_for(hp))
    opt_c.step()
    return sup_value, unsup_value, keep_rate


def shared_step(sd, g, batch, hp, opt_sd, opt_g, rng, step=0, epoch=0):
    """Combined update of the two-headed discriminator, then a G step.

    The objective is lambda * (BCE(Dd(G(z)),0) + BCE(Dd(x),1)) +
    CE(Dc(x),y), backpropagated once through trunk and both heads. The
    classification head never sees generated images. With lambda = 0 the
    discrimination head's gradient is structurally zero (its only loss
    terms carry the lambda factor), so the update equals supervised
    training of trunk plus classification head; the dead fake branch is
    skipped and the zero gradient is filled in explicitly.
    """
    logits, p_real = sd.forward(batch.images)
    ce = cross_entropy(logits, batch.labels)
    loss_d_value = 0.0
    if hp.lam > 0:
        n = batch.images.shape[0]
        lv = _draw_latent(n, sd.spec.num_classes, False, rng)
        with no_grad():
            fake = g.forward(lv.values, update_stats=False)
        _, p_fake = sd.forward(fake.detach(), update_stats=False)
        gan_terms = add(bce(p_fake, 0.0), bce(p_real, 1.0))
        loss_d_value = gan_terms.item()
        loss = add(scale(gan_terms, hp.lam), ce)
    else:
        loss = ce
    sup_value = _check_finite(ce.item(), step, "shared classifier loss")
    _check_finite(loss_d_value, step, "shared discriminator loss")
    opt_sd.zero_grad()
    backward(loss)
    if hp.lam == 0:
        for name, p in sd.trainable_parameters():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    apply_weight_decay(sd.trainable_parameters(), _decay_for(hp))
    opt_sd.step()

    lv2 = _draw_latent(batch.images.shape[0], sd.spec.num_classes, False, rng)
    fake2 = g.forward(lv2.values)
    _, p_fake2 = sd.forward(fake2, update_stats=False)
    loss_g = bce(p_fake2, 1.0)
    loss_g_value = _check_finite(loss_g.item(), step, "generator loss")
    opt_g.zero_grad()
    backward(loss_g)
    opt_g.step()

    return StepMetrics(
        loss_d=loss_d_value,
        loss_g=loss_g_value,
        loss_c_sup=sup_value,
        loss_c_unsup=0.0,
        keep_rate=0.0,
        step=step,
        epoch=epoch,
    )


def evaluate(net, dataset, batch_size=64):
    """Accuracy of argmax predictions in eval mode (running statistics)."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    mode = net.mode
    net.eval()
    correct = 0
    try:
        with no_grad():
            for start in range(0, len(dataset), batch_size):
                chunk = dataset.images[start : start + batch_size]
                x = Tensor(chunk * 2.0 - 1.0)
                logits = net.class_logits(x)
                pred = logits.data.argmax(axis=1)
                correct += int((pred == dataset.labels[start : start + batch_size]).sum())
    finally:
        net.mode = mode
    return correct / len(dataset)


@dataclass
class TrainResult:
    networks: dict
    optimizers: dict
    history: list = field(default_factory=list)


def _net_specs(variant, dataset, hp):
    common = dict(
        image_size=dataset.image_size,
        channels=dataset.channels,
        num_classes=dataset.num_classes,
        base_width=hp.base_width,
    )
    conditional = variant == "ecgan_conditional"
    specs = {}
    if variant in ("ecgan", "ecgan_conditional", "baseline"):
        specs["classifier"] = NetworkSpec(role="classifier", depth=hp.depth, **common)
    if variant in ("ecgan", "ecgan_conditional"):
        specs["generator"] = NetworkSpec(role="generator", conditional=conditional, **common)
        specs["discriminator"] = NetworkSpec(role="discriminator", conditional=conditional, **common)
    if variant == "shared":
        specs["shared"] = NetworkSpec(role="shared_discriminator", **common)
        specs["generator"] = NetworkSpec(role="generator", **common)
    return specs


def train(variant, dataset, hp, eval_dataset=None, on_epoch=None):
    """Run one training job; returns networks, optimizers, and per-epoch history.

    History rows carry epoch means of the step losses and keep rate plus
    train/test accuracy. `on_epoch`, when given, is called with each row.
    """
    if variant not in VARIANTS:
        raise SpecError(f"unknown variant {variant!r}")
    specs = _net_specs(variant, dataset, hp)
    rng_data = Rng(hp.seed, "data")
    rng_latent = Rng(hp.seed, "latent")

    nets = {}
    opts = {}
    if "classifier" in specs:
        nets["classifier"] = build_classifier(specs["classifier"], Rng(hp.seed, "init/classifier"))
        opts["classifier"] = Adam(nets["classifier"].trainable_parameters(), hp.lr_c, betas=CLS_BETAS)
    if "generator" in specs:
        nets["generator"] = build_generator(specs["generator"], Rng(hp.seed, "init/generator"))
        opts["generator"] = Adam(nets["generator"].trainable_parameters(), hp.lr_g, betas=GAN_BETAS)
    if "discriminator" in specs:
        nets["discriminator"] = build_discriminator(specs["discriminator"], Rng(hp.seed, "init/discriminator"))
        opts["discriminator"] = Adam(nets["discriminator"].trainable_parameters(), hp.lr_d, betas=GAN_BETAS)
    if "shared" in specs:
        nets["shared"] = build_shared_discriminator(specs["shared"], Rng(hp.seed, "init/shared"))
        opts["shared"] = Adam(nets["shared"].trainable_parameters(), hp.lr_c, betas=CLS_BETAS)

    classifier_key = "classifier" if "classifier" in nets else "shared"
    hp_supervised = HyperParams(**{**hp.__dict__, "lam": 0.0}) if variant == "baseline" else None
    history = []
    step = 0
    for epoch in range(hp.epochs):
        sums = StepMetrics()
        n_steps = 0
        for batch in batches(dataset, hp.batch_size, rng_data, hp.augment):
            if variant == "shared":
                metrics = shared_step(
                    nets["shared"], nets["generator"], batch, hp,
                    opts["shared"], opts["generator"], rng_latent,
                    step=step, epoch=epoch,
                )
            elif variant == "baseline":
                sup, _, _ = classifier_step(
                    nets["classifier"], None, batch, hp_supervised,
                    opts["classifier"], rng_latent, step=step,
                )
                metrics = StepMetrics(loss_c_sup=sup, step=step, epoch=epoch)
            else:
                loss_d = discriminator_step(
                    nets["discriminator"], nets["generator"], batch.images,
                    opts["discriminator"], rng_latent, step=step, labels=batch.labels,
                )
                loss_g = generator_step(
                    nets["generator"], nets["discriminator"], len(batch),
                    opts["generator"], rng_latent, step=step,
                )
                sup, unsup, keep = classifier_step(
                    nets["classifier"], nets["generator"], batch, hp,
                    opts["classifier"], rng_latent, step=step,
                )
                metrics = StepMetrics(loss_d, loss_g, sup, unsup, keep, step, epoch)
            sums.loss_d += metrics.loss_d
            sums.loss_g += metrics.loss_g
            sums.loss_c_sup += metrics.loss_c_sup
            sums.loss_c_unsup += metrics.loss_c_unsup
            sums.keep_rate += metrics.keep_rate
            n_steps += 1
            step += 1

        row = {
            "epoch": epoch,
            "loss_d": sums.loss_d / n_steps,
            "loss_g": sums.loss_g / n_steps,
            "loss_c_sup": sums.loss_c_sup / n_steps,
            "loss_c_unsup": sums.loss_c_unsup / n_steps,
            "keep_rate": sums.keep_rate / n_steps,
            "train_acc": evaluate(nets[classifier_key], dataset),
            "test_acc": evaluate(nets[classifier_key], eval_dataset) if eval_dataset else float("nan"),
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)

    return TrainResult(networks=nets, optimizers=opts, history=history)
