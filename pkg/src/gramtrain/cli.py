"""Command line entry point.

Subcommands: gen-synth, train, eval, gram-error, hist. Exit codes: 0 success,
1 usage, 2 data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, evaluation, kvconfig, trainer
from .errors import GramtrainError, UsageError
from .gravity import EstimatorKind

log = logging.getLogger("gramtrain")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_split(path, valid_fraction: float, seed: int):
    ds = data.parse_tsv(path)
    train_idx, valid_idx = data.split_indices(len(ds), valid_fraction, seed)
    return ds, ds.subset(train_idx, "train"), ds.subset(valid_idx, "valid"), train_idx


def _config_of(meta) -> trainer.TrainConfig | None:
    if not meta or "config" not in meta:
        return None
    return kvconfig.from_mapping(trainer.TrainConfig, kvconfig.parse_lines(meta["config"], "<checkpoint>"),
                                 "<checkpoint>")


def _pick(ds, train, valid, which: str):
    return {"all": ds, "train": train, "valid": valid}[which]


# --------------------------------------------------------------------------

def cmd_gen_synth(args) -> None:
    spec = kvconfig.load(data.SynthSpec, args.spec)
    if args.seed is not None:
        spec = data.SynthSpec(**{**vars(spec), "seed": args.seed})
    ds = data.gen_synthetic(spec, args.out)
    print(f"wrote {len(ds)} examples to {args.out}")


def cmd_train(args) -> None:
    config = trainer.TrainConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.prior is not None:
        overrides["prior"] = str(args.prior)
    if overrides:
        config = kvconfig.from_mapping(trainer.TrainConfig,
                                       {**kvconfig.parse_lines(kvconfig.dump(config)),
                                        **{k: str(v) for k, v in overrides.items()}})
    ds, train, valid, train_idx = _load_split(args.data, config.valid_fraction, config.seed)
    prior = None
    if config.prior:
        prior = trainer.load_prior(config.prior, len(ds)).subset(train_idx)
    state = trainer.load_state(args.resume, config, train, prior) if args.resume else None
    result = trainer.run(config, train, valid, args.out, prior, state)
    print(f"trained {result.state.step} steps; metrics in {Path(args.out) / 'metrics.csv'}")


def cmd_eval(args) -> None:
    params, meta, _ = checkpoint.load(args.checkpoint)
    config = _config_of(meta)
    frac = args.valid_fraction if args.valid_fraction is not None else (config.valid_fraction if config else 0.1)
    split_seed = args.split_seed if args.split_seed is not None else (config.seed if config else 0)
    ds, train, valid, _ = _load_split(args.data, frac, split_seed)
    target = _pick(ds, train, valid, args.split)
    rel = data.relevant_sets(target, args.threshold)
    queries = sorted(rel.items())
    if args.queries and len(queries) > args.queries:
        keep = np.random.default_rng([args.seed, 1]).choice(len(queries), args.queries, replace=False)
        queries = [queries[i] for i in sorted(keep)]
    value, skipped = evaluation.map_at_k(params, queries, target, args.k, args.candidates, args.seed,
                                         return_skipped=True)
    print(f"map_at_{args.k}\t{value:.10g}\nqueries\t{len(queries)}\nskipped\t{skipped}")


def cmd_gram_error(args) -> None:
    specs = [EstimatorKind.parse(s) for s in args.estimators.split(",")]
    traj = trainer.read_trajectory(args.trajectory)
    ds = data.parse_tsv(args.data)
    target = ds
    if args.split != "all":
        _, train, valid, _ = _load_split(args.data, args.valid_fraction, args.split_seed)
        target = _pick(ds, train, valid, args.split)
    rows = []
    for b in args.batch_size:
        rows += evaluation.gram_error_replay(traj, specs, target, b, args.seed, args.reference_size)
    evaluation.write_replay(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_hist(args) -> None:
    lo, hi, count = args.bins
    if not count >= 1 or int(count) != count or not hi > lo:
        raise UsageError("--bins needs lo,hi,count with hi > lo and an integer count >= 1")
    params, meta, _ = checkpoint.load(args.checkpoint)
    ds = data.parse_tsv(args.data)
    edges = np.linspace(lo, hi, int(count) + 1)
    observed, random = evaluation.inner_product_histogram(params, ds, edges, args.num_random, args.seed)
    evaluation.write_histogram(args.out, edges, observed, random)
    print(f"wrote {int(count)} bins to {args.out}")


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gramtrain", description="Two-tower training with Gramian-estimated gravity.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synth", help="write a planted synthetic dataset")
    s.add_argument("--spec", required=True, help="key = value SynthSpec file")
    s.add_argument("--out", required=True, help="output TSV (a .manifest is written next to it)")
    s.add_argument("--seed", type=int, help="overrides the spec seed")
    s.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True, help="key = value TrainConfig file")
    s.add_argument("--data", required=True, help="TSV dataset")
    s.add_argument("--out", default="run", help="output directory (default: run)")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--steps", type=int, help="overrides the config step count")
    s.add_argument("--prior", help="low-rank prior file, one line per example")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="MAP@K of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("all", "train", "valid"), default="valid")
    s.add_argument("--valid-fraction", type=float, help="default: from the checkpoint config")
    s.add_argument("--split-seed", type=int, help="default: the checkpoint config seed")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--candidates", type=int, default=2000)
    s.add_argument("--queries", type=int, default=0, help="evaluate a random subset (0: all)")
    s.add_argument("--threshold", type=float, default=0.0, help="targets above it are relevant")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gram-error", help="replay estimators along a checkpoint trajectory")
    s.add_argument("--trajectory", required=True, help="trajectory.txt written by train")
    s.add_argument("--data", required=True)
    s.add_argument("--estimators", required=True,
                   help="comma-separated: exact, sampling, sogram:ALPHA, sagram:avg, sagram:saga")
    s.add_argument("--batch-size", type=int, nargs="+", default=[128])
    s.add_argument("--split", choices=("all", "train", "valid"), default="train")
    s.add_argument("--valid-fraction", type=float, default=0.1)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--reference-size", type=int, default=evaluation.FULL_PASS_LIMIT)
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gram_error)

    s = sub.add_parser("hist", help="inner-product histograms of observed and random pairs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--bins", type=_float_list, default=(-2.0, 2.0, 40.0),
                   help="lo,hi,count; write --bins=-2,2,40 when lo is negative")
    s.add_argument("--num-random", type=int, default=10000)
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_hist)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        args.func(args)
    except GramtrainError as e:
        print(f"gramtrain: error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
