"""Head-to-head on the synthetic shapes protocol: supplemented vs plain supervised.

Trains each requested variant over the same seeds and prints per-seed final
test accuracy plus mean/median deltas against the baseline.
"""
import argparse

import numpy as np

from ecgan.config import ExperimentConfig
from ecgan.harness import load_datasets, run_cell


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", nargs="+", default=["baseline", "ecgan"],
                    choices=["baseline", "ecgan", "shared", "ecgan_conditional"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--percent", type=float, default=100.0)
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--train-per-class", type=int, default=67)
    ap.add_argument("--test-per-class", type=int, default=167)
    ap.add_argument("--data-seed", type=int, default=100)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        dataset={
            "source": "synth",
            "train_per_class": args.train_per_class,
            "test_per_class": args.test_per_class,
            "data_seed": args.data_seed,
        },
        hyperparams={"epochs": args.epochs},
    )
    train_ds, test_ds = load_datasets(cfg.dataset)
    finals = {v: [] for v in args.variants}
    for seed in args.seeds:
        for variant in args.variants:
            lam = 0.0 if variant == "baseline" else args.lam
            res = run_cell(cfg, train_ds, test_ds, variant, args.percent, lam, seed)
            acc = res.history[-1]["test_acc"]
            finals[variant].append(acc)
            print(f"seed {seed} {variant:18s} test_acc {acc:.4f}", flush=True)
    print()
    for variant, accs in finals.items():
        spread = np.std(accs, ddof=1) if len(accs) > 1 else 0.0
        print(f"{variant:18s} mean {np.mean(accs):.4f} +/- {spread:.4f}")
    if "baseline" in finals:
        base = np.asarray(finals["baseline"])
        for variant in args.variants:
            if variant == "baseline":
                continue
            d = np.asarray(finals[variant]) - base
            print(f"{variant} - baseline: mean {d.mean():+.4f} median {np.median(d):+.4f}")


if __name__ == "__main__":
    main()
