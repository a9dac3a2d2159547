"""Two-tower feed-forward embedding model with hand-written backprop.

Each item is a sparse bag of (feature-space, index, weight) slots. Every feature
space owns one embedding table shared by both towers; a tower mean-pools each
space's rows, concatenates the pooled vectors over all spaces, and maps them
through ReLU hidden layers and a final linear layer to R^k.

All forward/backward routines work on a batch (:class:`FeatureBatch`), with
thin single-example wrappers on top.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

SIDES = ("left", "right")


@dataclass(frozen=True)
class FeatureVector:
    """Sparse item encoding: a tuple of ``(space, index, weight)`` slots."""

    slots: tuple[tuple[int, int, float], ...]

    @classmethod
    def bag(cls, tokens: Iterable[tuple[int, int]]) -> "FeatureVector":
        """Mean-pool a bag: each token gets weight 1 / (tokens of its space)."""
        tokens = list(tokens)
        per_space = Counter(s for s, _ in tokens)
        merged: dict[tuple[int, int], float] = {}
        for s, idx in tokens:
            merged[(s, idx)] = merged.get((s, idx), 0.0) + 1.0 / per_space[s]
        return cls(tuple((s, i, w) for (s, i), w in merged.items()))

    @classmethod
    def one_hot(cls, space: int, index: int) -> "FeatureVector":
        return cls(((space, index, 1.0),))


@dataclass(frozen=True)
class SparseRows:
    """Minimal CSR matrix (rows x ncols): row r holds columns
    ``indices[indptr[r]:indptr[r + 1]]`` with weights from ``data``.

    Only the three operations the towers need: row gathering, pooling
    (``self @ T``) and the transposed product for table gradients.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    ncols: int

    @property
    def nrows(self) -> int:
        return self.indptr.size - 1

    def take(self, rows) -> "SparseRows":
        rows = np.asarray(rows, dtype=np.int64)
        start = self.indptr[rows]
        lengths = self.indptr[rows + 1] - start
        indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        pos = np.repeat(start - indptr[:-1], lengths) + np.arange(indptr[-1])
        return SparseRows(indptr, self.indices[pos], self.data[pos], self.ncols)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.nrows), np.diff(self.indptr))

    def matmul(self, T: np.ndarray) -> np.ndarray:
        """(nrows, d) = self @ T."""
        out = np.zeros((self.nrows, T.shape[1]))
        if self.indices.size == 0:
            return out
        vals = self.data[:, None] * T[self.indices]
        lengths = np.diff(self.indptr)
        if np.all(lengths == 1):
            return vals
        nz = lengths > 0
        # reduceat sums each row's contiguous segment; empty rows stay zero
        out[nz] = np.add.reduceat(vals, self.indptr[:-1][nz], axis=0)
        return out

    def rmatmul_into(self, G: np.ndarray, out: np.ndarray) -> None:
        """out += self^T @ G, with G of shape (nrows, d)."""
        if self.indices.size:
            np.add.at(out, self.indices, self.data[:, None] * G[self.row_ids()])


@dataclass(frozen=True)
class FeatureBatch:
    """A batch of items as one sparse (batch x vocab) matrix per feature space."""

    mats: tuple[SparseRows, ...]

    def __len__(self) -> int:
        return self.mats[0].nrows if self.mats else 0

    def take(self, idx) -> "FeatureBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureBatch(tuple(m.take(idx) for m in self.mats))


def encode(features: Sequence[FeatureVector], vocab_sizes: Sequence[int]) -> FeatureBatch:
    n = len(features)
    counts = np.zeros((len(vocab_sizes), n + 1), dtype=np.int64)
    cols: list[list[int]] = [[] for _ in vocab_sizes]
    vals: list[list[float]] = [[] for _ in vocab_sizes]
    for r, fv in enumerate(features):
        # slots of one space must be contiguous per row: sort by space, keep order within
        for s, idx, w in sorted(fv.slots, key=lambda slot: slot[0]):
            if not 0 <= s < len(vocab_sizes):
                raise DataError(f"item {r}: unknown feature space {s}")
            if not 0 <= idx < vocab_sizes[s]:
                raise DataError(f"item {r}: index {idx} outside vocabulary of space {s} (size {vocab_sizes[s]})")
            if not np.isfinite(w):
                raise DataError(f"item {r}: non-finite weight")
            counts[s, r + 1] += 1
            cols[s].append(idx)
            vals[s].append(w)
    mats = tuple(
        SparseRows(np.cumsum(counts[s]), np.asarray(cols[s], dtype=np.int64), np.asarray(vals[s], dtype=np.float64), v)
        for s, v in enumerate(vocab_sizes)
    )
    return FeatureBatch(mats)


@dataclass(frozen=True)
class TowerConfig:
    embed_dims: tuple[int, ...]  # one per feature space
    hidden: tuple[int, ...]
    dim: int  # k

    def __post_init__(self):
        if self.dim < 1 or any(h < 1 for h in self.hidden) or any(d < 1 for d in self.embed_dims):
            raise UsageError("tower sizes must be >= 1")
        if not self.embed_dims:
            raise UsageError("need at least one feature space")

    @property
    def input_dim(self) -> int:
        return sum(self.embed_dims)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.dim)


@dataclass
class ModelParams:
    """Shared embedding tables plus per-tower dense layers.

    ``W[side][l]`` has shape (out, in); ``b[side][l]`` has shape (out,).
    Doubles as the gradient buffer (see :meth:`zeros_like`).
    """

    config: TowerConfig
    tables: list[np.ndarray]
    W: dict[str, list[np.ndarray]]
    b: dict[str, list[np.ndarray]]

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.tables)

    def arrays(self) -> list[np.ndarray]:
        """All tensors in declaration order: tables, then left layers, then right."""
        out = list(self.tables)
        for side in SIDES:
            for W, b in zip(self.W[side], self.b[side]):
                out += [W, b]
        return out

    def names(self) -> list[str]:
        out = [f"table{s}" for s in range(len(self.tables))]
        for side in SIDES:
            for l in range(len(self.W[side])):
                out += [f"{side}.W{l}", f"{side}.b{l}"]
        return out

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            self.config,
            [np.zeros_like(t) for t in self.tables],
            {s: [np.zeros_like(w) for w in self.W[s]] for s in SIDES},
            {s: [np.zeros_like(b) for b in self.b[s]] for s in SIDES},
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            [t.copy() for t in self.tables],
            {s: [w.copy() for w in self.W[s]] for s in SIDES},
            {s: [b.copy() for b in self.b[s]] for s in SIDES},
        )

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def assign_flat(self, theta: np.ndarray) -> None:
        off = 0
        for a in self.arrays():
            a[...] = theta[off:off + a.size].reshape(a.shape)
            off += a.size
        if off != theta.size:
            raise UsageError(f"flat vector has {theta.size} entries, model has {off}")

    def axpy(self, alpha: float, other: "ModelParams") -> None:
        """self += alpha * other, in place."""
        for a, g in zip(self.arrays(), other.arrays()):
            a += alpha * g

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(config: TowerConfig, vocab_sizes: Sequence[int], rng: np.random.Generator) -> ModelParams:
    """Uniform(-s, s) with s = 1/sqrt(fan-in); biases zero.

    For an embedding table the fan-in is taken to be its row dimension.
    """
    if len(vocab_sizes) != len(config.embed_dims):
        raise UsageError("one vocabulary size per feature space required")
    tables = []
    for v, d in zip(vocab_sizes, config.embed_dims):
        s = 1.0 / np.sqrt(d)
        tables.append(rng.uniform(-s, s, size=(v, d)))
    W: dict[str, list[np.ndarray]] = {}
    b: dict[str, list[np.ndarray]] = {}
    sizes = config.layer_sizes
    for side in SIDES:
        W[side], b[side] = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            s = 1.0 / np.sqrt(fan_in)
            W[side].append(rng.uniform(-s, s, size=(fan_out, fan_in)))
            b[side].append(np.zeros(fan_out))
    return ModelParams(config, tables, W, b)


@dataclass
class ForwardTrace:
    side: str
    inputs: FeatureBatch
    pre: list[np.ndarray] = field(default_factory=list)  # z_l for every layer
    act: list[np.ndarray] = field(default_factory=list)  # h_0 (pooled input), h_1 .. h_{L-1}


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise UsageError(f"side must be 'left' or 'right', got {side!r}")


def forward(params: ModelParams, side: str, batch: FeatureBatch) -> tuple[np.ndarray, ForwardTrace]:
    """Embed a batch with one tower. Returns (B, k) embeddings and the trace."""
    _check_side(side)
    if len(batch.mats) != len(params.tables):
        raise UsageError("feature batch and model disagree on the number of feature spaces")
    for m, t in zip(batch.mats, params.tables):
        if m.ncols != t.shape[0]:
            raise DataError(f"batch vocabulary {m.ncols} != table size {t.shape[0]}")
    h = np.hstack([m.matmul(t) for m, t in zip(batch.mats, params.tables)])
    trace = ForwardTrace(side, batch)
    Ws, bs = params.W[side], params.b[side]
    L = len(Ws)
    for l in range(L):
        trace.act.append(h)
        z = h @ Ws[l].T + bs[l]
        trace.pre.append(z)
        h = np.maximum(z, 0.0) if l < L - 1 else z
    return h, trace


def embed_all(params: ModelParams, side: str, batch: FeatureBatch, chunk: int = 65536) -> np.ndarray:
    """Embeddings only, chunked to bound memory on full passes."""
    n = len(batch)
    if n <= chunk:
        return forward(params, side, batch)[0]
    parts = [forward(params, side, batch.take(np.arange(i, min(i + chunk, n))))[0] for i in range(0, n, chunk)]
    return np.vstack(parts)


def _single(params: ModelParams, side: str, fv: FeatureVector):
    out, trace = forward(params, side, encode([fv], params.vocab_sizes))
    return out[0], trace


def forward_left(params: ModelParams, x: FeatureVector) -> tuple[np.ndarray, ForwardTrace]:
    return _single(params, "left", x)


def forward_right(params: ModelParams, y: FeatureVector) -> tuple[np.ndarray, ForwardTrace]:
    return _single(params, "right", y)


def predict(params: ModelParams, x: FeatureVector, y: FeatureVector) -> float:
    u, _ = forward_left(params, x)
    v, _ = forward_right(params, y)
    return float(u @ v)


def _tower_backward(params: ModelParams, trace: ForwardTrace, grad: np.ndarray, out: ModelParams) -> None:
    side = trace.side
    Ws = params.W[side]
    L = len(Ws)
    if grad.shape != trace.pre[-1].shape:
        raise UsageError(f"upstream gradient shape {grad.shape} != output shape {trace.pre[-1].shape}")
    gz = grad
    for l in range(L - 1, -1, -1):
        out.W[side][l] += gz.T @ trace.act[l]
        out.b[side][l] += gz.sum(axis=0)
        gh = gz @ Ws[l]
        if l > 0:
            gz = gh * (trace.pre[l - 1] > 0.0)
    off = 0
    for s, m in enumerate(trace.inputs.mats):
        d = params.tables[s].shape[1]
        m.rmatmul_into(gh[:, off:off + d], out.tables[s])
        off += d


def backward(
    params: ModelParams,
    trace_left: ForwardTrace | None,
    trace_right: ForwardTrace | None,
    grad_u: np.ndarray | None,
    grad_v: np.ndarray | None,
    out: ModelParams,
) -> None:
    """Accumulate J^T grad for both towers into ``out`` (sums over the batch).

    Shared embedding tables receive the sum of both towers' contributions.
    Either side may be skipped by passing ``None``.
    """
    for trace, grad in ((trace_left, grad_u), (trace_right, grad_v)):
        if grad is None:
            continue
        if trace is None:
            raise UsageError("gradient given without a matching forward trace")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.ndim == 1:
            grad = grad[None, :]
        _tower_backward(params, trace, grad, out)
