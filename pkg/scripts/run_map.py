#!/usr/bin/env python3
"""Final validation MAP@10 per estimator and seed on synthetic classification data."""

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from gramtrain import experiments


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", help="default: the experiment's seeds")
    p.add_argument("--steps", type=int, help="override the step budget")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    exp = experiments.MapExperiment()
    if args.seeds:
        exp = replace(exp, seeds=tuple(args.seeds))
    if args.steps:
        exp = replace(exp, train=replace(exp.train, steps=args.steps, eval_every=args.steps))
    out = experiments.run_map(exp)

    base = np.array(out["sampling"])
    print(f"{'estimator':<14} " + " ".join(f"seed {s:<4}" for s in exp.seeds) + "  mean diff vs sampling")
    for est, values in out.items():
        diff = np.mean(np.array(values) - base)
        print(f"{est:<14} " + " ".join(f"{v:9.4f}" for v in values) + f"  {diff:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
