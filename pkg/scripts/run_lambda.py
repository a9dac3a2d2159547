#!/usr/bin/env python3
"""Sweep the gravity coefficient: validation MAP and inner-product statistics."""

import argparse
import logging
import sys
from dataclasses import replace

from gramtrain import experiments


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lams", type=float, nargs="+", help="default: 0.01 10 1000")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    exp = experiments.LambdaExperiment()
    if args.lams:
        exp = replace(exp, lams=tuple(args.lams))
    print(f"{'lambda':>8} {'valid MAP':>10} {'observed mean':>14} {'random mean':>12}")
    for pt in experiments.run_lambda(exp):
        print(f"{pt.lam:8g} {pt.valid_map:10.4f} {pt.observed_mean:14.4f} {pt.random_mean:12.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
