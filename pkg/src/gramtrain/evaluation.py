"""Evaluation: MAP@K against sampled candidates, Gramian-error replay along a
recorded trajectory, and inner-product histograms."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, gravity
from .data import Dataset
from .errors import DataError, UsageError
from .gravity import Estimator, EstimatorKind
from .model import ModelParams, embed_all, forward

log = logging.getLogger(__name__)

REPLAY_HEADER = ("step", "estimator", "batch_size", "gram_err_u", "gram_err_v")
HIST_HEADER = ("bin_lo", "bin_hi", "count_observed", "count_random")
FULL_PASS_LIMIT = 100_000


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    num_candidates: int = 2000
    bins: tuple[float, ...] = tuple(np.linspace(-2.0, 2.0, 41))
    reference_size: int = FULL_PASS_LIMIT
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.num_candidates < self.k:
            raise UsageError("need k >= 1 and num_candidates >= k")


# --------------------------------------------------------------------------
# MAP@K

def average_precision_at_k(relevance_in_rank_order, n_relevant: int, k: int) -> float:
    """AP@K = sum over relevant hits r <= K of precision@r, divided by min(K, n_relevant)."""
    rel = np.asarray(relevance_in_rank_order[:k], dtype=bool)
    if n_relevant <= 0:
        raise UsageError("average precision needs at least one relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float(np.sum((hits / ranks)[rel])) / min(k, n_relevant)


def rank_candidates(scores, candidate_ids) -> np.ndarray:
    """Order by descending score, ties broken by ascending candidate id."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.asarray(candidate_ids), -scores))


def map_from_embeddings(Q: np.ndarray, relevant: Sequence[np.ndarray], R: np.ndarray, k: int,
                        num_candidates: int, rng: np.random.Generator) -> tuple[float, int]:
    """MAP@K over queries with embeddings ``Q`` against the right universe ``R``.

    Each query is scored on its relevant items plus ``num_candidates`` negatives
    drawn without replacement from the universe minus its relevant items.
    Returns (MAP, number of skipped queries).
    """
    if len(relevant) == 0:
        raise UsageError("empty query set")
    m = R.shape[0]
    all_ids = np.arange(m)
    aps = []
    skipped = 0
    for q, rel in zip(Q, relevant):
        rel = np.unique(np.asarray(rel, dtype=np.int64))
        if rel.size == 0:
            skipped += 1
            continue
        pool = np.setdiff1d(all_ids, rel, assume_unique=True)
        neg = rng.choice(pool, size=min(num_candidates, pool.size), replace=False) if pool.size else pool
        ids = np.concatenate([rel, neg])
        is_rel = np.zeros(ids.size, dtype=bool)
        is_rel[:rel.size] = True
        order = rank_candidates(R[ids] @ q, ids)
        aps.append(average_precision_at_k(is_rel[order], rel.size, k))
    if not aps:
        log.warning("MAP: all %d queries skipped", skipped)
        return 0.0, skipped
    if skipped:
        log.info("MAP: skipped %d queries without relevant items", skipped)
    return float(np.mean(aps)), skipped


def map_at_k(params: ModelParams, queries, dataset: Dataset, k: int = 10, num_candidates: int = 2000,
             seed: int = 0, return_skipped: bool = False):
    """MAP@K for ``queries`` = [(left item id, set of relevant right item ids), ...].

    Item ids index ``dataset.universe``; candidates come from its right items.
    """
    if not queries:
        raise UsageError("empty query set")
    uni = dataset.universe
    ids = np.array([q for q, _ in queries], dtype=np.int64)
    Q = forward(params, "left", uni.left_batch.take(ids))[0]
    R = embed_all(params, "right", uni.right_batch)
    value, skipped = map_from_embeddings(Q, [np.fromiter(r, dtype=np.int64, count=len(r)) for _, r in queries],
                                         R, k, num_candidates, np.random.default_rng(seed))
    return (value, skipped) if return_skipped else value


# --------------------------------------------------------------------------
# Gramian-error replay

def _load(item) -> ModelParams:
    if isinstance(item, ModelParams):
        return item
    try:
        return checkpoint.load(item)[0]
    except DataError:
        raise
    except Exception as e:  # pragma: no cover - defensive
        raise DataError(f"{item}: {e}") from e


def gram_error_replay(trajectory, estimators: Sequence[EstimatorKind], data: Dataset, batch_size: int,
                      seed: int = 0, reference_size: int = FULL_PASS_LIMIT) -> list[dict]:
    """Track the true Gramians along a fixed trajectory with each estimator.

    ``trajectory`` is a list of (step, checkpoint path or ModelParams) with
    strictly increasing steps. Between checkpoints c-1 and c the estimators
    make ``step_c - step_{c-1}`` updates (at least one) using the parameters of
    checkpoint c; the estimate after the last update is compared with the
    Gramians at checkpoint c. The reference is exact when the dataset has at
    most ``reference_size`` examples, else computed on a fixed random sample of
    that size. No parameters are ever updated.
    """
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    steps = [s for s, _ in trajectory]
    if not steps:
        raise UsageError("empty trajectory")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise UsageError("trajectory steps must be strictly increasing")
    n = len(data)
    ref_idx = None
    if n > reference_size:
        ref_idx = np.sort(np.random.default_rng([seed, 2]).choice(n, reference_size, replace=False))
    first = _load(trajectory[0][1])
    ests = [Estimator(spec, n, first.config.dim) for spec in estimators]
    rngs = [np.random.default_rng([seed, 3]) for _ in estimators]
    rows = []
    prev = 0
    for c, (step, item) in enumerate(trajectory):
        try:
            params = first if c == 0 else _load(item)
        except DataError as e:
            raise DataError(f"checkpoint for step {step}: {e}") from e
        full = ref_idx is None or any(e.needs_full_pass or e.needs_init for e in ests)
        if full:
            U_all = embed_all(params, "left", data.left)
            V_all = embed_all(params, "right", data.right)
        if ref_idx is None:
            ref = gravity.exact_gramians(U_all, V_all)
        else:
            ref = gravity.exact_gramians(embed_all(params, "left", data.left.take(ref_idx)),
                                         embed_all(params, "right", data.right.take(ref_idx)))

        def emb(idx):
            if full:
                return U_all[idx], V_all[idx]
            return (forward(params, "left", data.left.take(idx))[0],
                    forward(params, "right", data.right.take(idx))[0])

        updates = max(1, step - prev) if c else max(1, step)
        prev = step
        for est, rng in zip(ests, rngs):
            if est.needs_init:
                est.initialize(U_all, V_all)
            for t in range(updates):
                idx_b = rng.integers(0, n, batch_size)
                idx_bp = rng.integers(0, n, batch_size)
                if est.needs_full_pass:
                    if t == 0:
                        est.update(np.arange(n), U_all, V_all)
                else:
                    est.update(idx_b, *emb(idx_b))
                est.commit(idx_bp, *emb(idx_bp))
            G = est.current
            rows.append({
                "step": step,
                "estimator": est.spec.label(),
                "batch_size": batch_size,
                "gram_err_u": gravity.estimation_error(G.G_u, ref.G_u),
                "gram_err_v": gravity.estimation_error(G.G_v, ref.G_v),
            })
    return rows


def write_replay(path, rows) -> None:
    _write_csv(path, REPLAY_HEADER, rows)


def read_replay(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["step"] = int(r["step"])
        r["batch_size"] = int(r["batch_size"])
        r["gram_err_u"] = float(r["gram_err_u"])
        r["gram_err_v"] = float(r["gram_err_v"])
    return rows


# --------------------------------------------------------------------------
# Inner-product histograms

def histogram(values, edges) -> np.ndarray:
    """Counts over ``edges``; values beyond the range land in the end bins."""
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise UsageError("bin edges must be a strictly increasing list of at least two values")
    values = np.clip(np.asarray(values, dtype=np.float64), edges[0], edges[-1])
    return np.histogram(values, edges)[0]


def pair_inner_products(params: ModelParams, data: Dataset, num_random: int, seed: int = 0):
    """(observed <u_i, v_i> over all examples, random <u_i, v_j> over uniform pairs)."""
    if len(data) == 0 or num_random < 1:
        raise UsageError("need a nonempty dataset and at least one random pair")
    U = embed_all(params, "left", data.left)
    V = embed_all(params, "right", data.right)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(data), num_random)
    j = rng.integers(0, len(data), num_random)
    return np.einsum("bi,bi->b", U, V), np.einsum("bi,bi->b", U[i], V[j])


def inner_product_histogram(params: ModelParams, data: Dataset, edges, num_random: int = 10000,
                            seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    observed, random = pair_inner_products(params, data, num_random, seed)
    return histogram(observed, edges), histogram(random, edges)


def write_histogram(path, edges, counts_observed, counts_random) -> None:
    rows = [{"bin_lo": f"{lo:.17g}", "bin_hi": f"{hi:.17g}", "count_observed": int(a), "count_random": int(b)}
            for lo, hi, a, b in zip(edges[:-1], edges[1:], counts_observed, counts_random)]
    _write_csv(path, HIST_HEADER, rows)


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=header)
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    except OSError as e:
        raise DataError(f"{Path(path)}: cannot write ({e.strerror})") from e
