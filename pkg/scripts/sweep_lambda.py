"""Supplement-weight study: run the lambda sweep and print a per-value table."""
import argparse
import csv
import os

from ecgan.harness import cmd_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    here = os.path.dirname(os.path.abspath(__file__))
    ap.add_argument("--config", default=os.path.join(here, "..", "configs", "sweep_lambda.json"))
    args = ap.parse_args()

    cmd_sweep(args.config, axis="lambda")
    import json

    with open(args.config) as f:
        out_dir = json.load(f).get("output_dir", "ecgan-runs")
    with open(os.path.join(out_dir, "sweep_summary.csv")) as f:
        rows = list(csv.DictReader(f))
    print(f"{'lambda':>8} {'variant':>10} {'mean_acc':>9} {'std':>7}")
    for row in rows:
        print(f"{row['value']:>8} {row['variant']:>10} {row['mean_test_acc']:>9} {row['std_test_acc']:>7}")
    ec = [(float(r["value"]), float(r["mean_test_acc"])) for r in rows if r["variant"] == "ecgan"]
    if ec:
        best = max(ec, key=lambda kv: kv[1])
        print(f"\nbest ecgan lambda: {best[0]:g} (mean test acc {best[1]:.4f})")


if __name__ == "__main__":
    main()
