#!/usr/bin/env python3
"""Replay Gramian estimators along one training trajectory and write the
per-checkpoint errors to CSV.

    python3 scripts/run_replay.py --out replay.csv
    python3 scripts/run_replay.py --variant crossover --out crossover.csv
    python3 scripts/run_replay.py --variant slow-eta --out slow.csv
"""

import argparse
import csv
import logging
import sys

from gramtrain import experiments

VARIANTS = {
    "base": lambda: experiments.ReplayExperiment(),
    "crossover": lambda: experiments.crossover_experiment(),
    "slow-eta": lambda: experiments.slow_eta_experiment(),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="base")
    p.add_argument("--out", required=True, help="CSV with one row per (batch size, estimator, checkpoint)")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    exp = VARIANTS[args.variant]()
    res = experiments.run_replay(exp)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(res.rows[0]))
        w.writeheader()
        w.writerows(res.rows)

    print(f"{'batch':>6} {'estimator':<14} {'mean':>8} {'first':>8} {'last':>8} {'to_floor':>8}")
    for b in exp.batch_sizes:
        for est in exp.estimators:
            first, last = res.decile_means(est, b)
            print(f"{b:>6} {est:<14} {res.mean_error(est, b):8.4f} {first:8.4f} {last:8.4f} "
                  f"{experiments.steps_to_floor(res.errors(est, b)):>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
