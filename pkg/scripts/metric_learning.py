"""Train encoders with the metric-learning protocols and report how well the
learned cosine distances match the exact metric.

    python scripts/metric_learning.py --protocol clean --out results/metric_clean.csv
    python scripts/metric_learning.py --protocol distractor --steps 20000
"""

import argparse
import csv

from simsr import experiments as ex

PROTOCOLS = {"clean": ex.METRIC_LEARNING, "distractor": ex.ROBUSTNESS}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", choices=sorted(PROTOCOLS), default="clean")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(ex.SEEDS))
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--out", default="metric_learning.csv")
    args = ap.parse_args()
    protocol = PROTOCOLS[args.protocol]
    if args.steps is not None:
        protocol = {**protocol, "run": {**protocol["run"], "steps": args.steps}}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "spearman_rho", "mean_abs_error", "invariance_gap"))
        for seed in args.seeds:
            o = ex.metric_learning(protocol, seed)
            w.writerow((seed, repr(o.spearman_rho), repr(o.mean_abs_error), repr(o.invariance_gap)))
            print(f"seed {seed}: rho {o.spearman_rho:.3f}  mae {o.mean_abs_error:.4f}  gap {o.invariance_gap:.4f}")


if __name__ == "__main__":
    main()
