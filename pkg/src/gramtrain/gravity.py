"""The gravity term and the Gramian estimators used to approximate its gradient.

Notation: ``U`` and ``V`` are (n, k) arrays of left/right embeddings (one row
per training example), a Gramian is ``G_u = U^T U / n``, and the gravity term is
``g = (1/n^2) sum_ij <u_i, v_j>^2 = <G_u, G_v>``.

The estimators keep ``(G_u_hat, G_v_hat)`` up to date from a stream of batches:

* ``exact``    -- recomputes the Gramians from a full pass (test oracle only)
* ``sampling`` -- batch mean of rank-1 terms, i.e. all cross pairs of the batch
* ``sagram``   -- per-example embedding caches with a SAG (beta=1/n) or SAGA
                  (beta=1) style correction
* ``sogram``   -- exponential moving average of batch rank-1 terms with rate alpha

With a low-rank prior ``p_ij = <q_i, r_j>`` the estimators additionally track
the weighted embedding matrices ``H_u = U^T Q / n`` and ``H_v = V^T R / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import DataError, UsageError

DEFAULT_CACHE_CAP = 10**8


@dataclass(frozen=True)
class GramianPair:
    G_u: np.ndarray
    G_v: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "GramianPair":
        return cls(np.zeros((k, k)), np.zeros((k, k)))

    @property
    def k(self) -> int:
        return self.G_u.shape[0]

    def value(self) -> float:
        """<G_u, G_v>, the gravity estimate these Gramians imply."""
        return linalg.frob_inner(self.G_u, self.G_v)


def _pair(U, V) -> tuple[np.ndarray, np.ndarray]:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape:
        raise UsageError(f"embedding arrays must share shape (n, k); got {U.shape} and {V.shape}")
    if U.shape[0] == 0:
        raise UsageError("need at least one example")
    return U, V


def gramian(U) -> np.ndarray:
    """(1/n) U^T U."""
    return linalg.batch_outer_mean(U)


def exact_gramians(U, V) -> GramianPair:
    U, V = _pair(U, V)
    return GramianPair(gramian(U), gramian(V))


def gravity_exact(U, V, chunk: int = 2048) -> float:
    """Double-sum form: (1/n^2) sum_i sum_j <u_i, v_j>^2, O(n^2 k)."""
    U, V = _pair(U, V)
    n = U.shape[0]
    total = 0.0
    for i in range(0, n, chunk):
        P = U[i:i + chunk] @ V.T
        total += float(np.sum(P * P))
    return total / (n * n)


def gravity_gram(U, V) -> float:
    """Gramian form: <G_u, G_v>, O(n k^2)."""
    return exact_gramians(U, V).value()


def ghat_i(u, v, G: GramianPair) -> float:
    """<u, G_v u> + <v, G_u v>."""
    u = linalg.as_vec(u)
    v = linalg.as_vec(v)
    return float(u @ G.G_v @ u + v @ G.G_u @ v)


def ghat_grad(u, v, G: GramianPair) -> tuple[np.ndarray, np.ndarray]:
    """Embedding-space gradient of :func:`ghat_i`: (2 G_v u, 2 G_u v)."""
    u = linalg.as_vec(u)
    v = linalg.as_vec(v)
    return 2.0 * G.G_v @ u, 2.0 * G.G_u @ v


def ghat_batch(U, V, G: GramianPair) -> np.ndarray:
    U, V = _pair(U, V)
    return np.einsum("bi,ij,bj->b", U, G.G_v, U) + np.einsum("bi,ij,bj->b", V, G.G_u, V)


def ghat_grad_batch(U, V, G: GramianPair) -> tuple[np.ndarray, np.ndarray]:
    U, V = _pair(U, V)
    # Gramians are symmetric, so right-multiplication equals G @ u per row
    return 2.0 * U @ G.G_v, 2.0 * V @ G.G_u


def sampling_estimate(batch_u, batch_v) -> GramianPair:
    """Batch-mean rank-1 Gramians; their inner product is the B x B double sum."""
    return exact_gramians(batch_u, batch_v)


def sogram_update(G: GramianPair, batch_u, batch_v, alpha: float) -> GramianPair:
    """G <- (1 - alpha) G + alpha * mean_{i in B} u_i u_i^T, per side."""
    if not 0.0 < alpha <= 1.0:
        raise UsageError(f"alpha must lie in (0, 1], got {alpha}")
    batch_u, batch_v = _pair(batch_u, batch_v)
    return GramianPair(
        linalg.symmetrize((1.0 - alpha) * G.G_u + alpha * gramian(batch_u)),
        linalg.symmetrize((1.0 - alpha) * G.G_v + alpha * gramian(batch_v)),
    )


def estimation_error(est, truth) -> float:
    """||est - truth||_F / ||truth||_F."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise UsageError(f"dimension mismatch: {est.shape} vs {truth.shape}")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise UsageError("estimation_error: reference matrix has zero norm")
    return float(np.linalg.norm(est - truth)) / denom


# --------------------------------------------------------------------------
# SAGram: cached embeddings and running sums

@dataclass
class EmbeddingCache:
    cached_u: np.ndarray  # (n, k)
    cached_v: np.ndarray
    S_u: np.ndarray  # (1/n) sum_i cached_u[i] cached_u[i]^T
    S_v: np.ndarray
    commits_since_rebuild: int = 0
    last_rebuild_drift: float = 0.0

    @property
    def n(self) -> int:
        return self.cached_u.shape[0]

    def rebuild(self) -> None:
        S_u, S_v = gramian(self.cached_u), gramian(self.cached_v)
        scale = max(float(np.linalg.norm(S_u)), float(np.linalg.norm(S_v)), 1e-300)
        self.last_rebuild_drift = max(float(np.linalg.norm(S_u - self.S_u)),
                                      float(np.linalg.norm(S_v - self.S_v))) / scale
        self.S_u, self.S_v = S_u, S_v
        self.commits_since_rebuild = 0


def sagram_init(U, V, max_entries: int = DEFAULT_CACHE_CAP) -> EmbeddingCache:
    U, V = _pair(U, V)
    if U.size > max_entries:
        raise UsageError(f"SAGram cache would hold {U.size} entries per side, above the cap of {max_entries}")
    U, V = U.copy(), V.copy()
    return EmbeddingCache(U, V, gramian(U), gramian(V))


def _indices(cache_n: int, idx) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    if idx.size == 0:
        raise UsageError("empty batch")
    if idx.min() < 0 or idx.max() >= cache_n:
        raise UsageError(f"example index out of range [0, {cache_n})")
    return idx


def _fresh(idx: np.ndarray, fresh) -> np.ndarray:
    fresh = np.asarray(fresh, dtype=np.float64)
    if fresh.ndim == 1:
        fresh = fresh[None, :]
    if fresh.shape[0] != idx.size:
        raise UsageError("one fresh embedding per index required")
    return fresh


def _first_occurrence(idx: np.ndarray) -> np.ndarray:
    _, first = np.unique(idx, return_index=True)
    return np.sort(first)


def _correction(cached: np.ndarray, fresh: np.ndarray) -> np.ndarray:
    """sum_i (fresh_i fresh_i^T - cached_i cached_i^T)."""
    return fresh.T @ fresh - cached.T @ cached


def sagram_estimate(cache: EmbeddingCache, idx, fresh_u, fresh_v, beta: str = "saga",
                    project: bool = True) -> GramianPair:
    """S_hat + beta * (fresh fresh^T - cached cached^T), per side.

    ``beta="avg"`` uses beta = 1/n and sums the correction over the distinct
    indices of the batch (so the estimate is the cache Gramian with those rows
    refreshed, hence PSD). ``beta="saga"`` uses beta = 1 with the batch mean of
    the corrections (unbiased), optionally followed by PSD projection.
    """
    idx = _indices(cache.n, idx)
    fresh_u = _fresh(idx, fresh_u)
    fresh_v = _fresh(idx, fresh_v)
    if beta == "avg":
        keep = _first_occurrence(idx)
        sel, fu, fv = idx[keep], fresh_u[keep], fresh_v[keep]
        coef = 1.0 / cache.n
    elif beta == "saga":
        sel, fu, fv = idx, fresh_u, fresh_v
        coef = 1.0 / idx.size
    else:
        raise UsageError(f"beta mode must be 'avg' or 'saga', got {beta!r}")
    G_u = linalg.symmetrize(cache.S_u + coef * _correction(cache.cached_u[sel], fu))
    G_v = linalg.symmetrize(cache.S_v + coef * _correction(cache.cached_v[sel], fv))
    if beta == "saga" and project:
        G_u, G_v = linalg.psd_project(G_u), linalg.psd_project(G_v)
    return GramianPair(G_u, G_v)


def sagram_commit(cache: EmbeddingCache, idx, fresh_u, fresh_v) -> None:
    """S += (1/n)(fresh fresh^T - cached cached^T) over distinct indices, then refresh caches."""
    idx = _indices(cache.n, idx)
    fresh_u = _fresh(idx, fresh_u)
    fresh_v = _fresh(idx, fresh_v)
    keep = _first_occurrence(idx)
    sel, fu, fv = idx[keep], fresh_u[keep], fresh_v[keep]
    n = cache.n
    cache.S_u = linalg.symmetrize(cache.S_u + _correction(cache.cached_u[sel], fu) / n)
    cache.S_v = linalg.symmetrize(cache.S_v + _correction(cache.cached_v[sel], fv) / n)
    cache.cached_u[sel] = fu
    cache.cached_v[sel] = fv
    cache.commits_since_rebuild += sel.size
    if cache.commits_since_rebuild >= n:
        cache.rebuild()


# --------------------------------------------------------------------------
# Low-rank prior

@dataclass
class LowRankPrior:
    q: np.ndarray  # (n, k_P)
    r: np.ndarray  # (n, k_P)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        if self.q.ndim != 2 or self.q.shape != self.r.shape:
            raise UsageError(f"prior factors must share shape (n, k_P); got {self.q.shape} and {self.r.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.r))):
            raise DataError("prior factors must be finite")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    def constant(self) -> float:
        """c' = <Q^T Q, R^T R> / n^2, the theta-free part of the prior penalty."""
        n = self.n
        return linalg.frob_inner(self.q.T @ self.q, self.r.T @ self.r) / (n * n)

    def subset(self, idx) -> "LowRankPrior":
        return LowRankPrior(self.q[idx], self.r[idx])

    @classmethod
    def zeros(cls, n: int, rank: int) -> "LowRankPrior":
        return cls(np.zeros((n, rank)), np.zeros((n, rank)))


def weighted_embeddings(U, Q) -> np.ndarray:
    """H = (1/n) U^T Q, a (k, k_P) matrix."""
    U = np.asarray(U, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if U.shape[0] != Q.shape[0] or U.shape[0] == 0:
        raise UsageError("embeddings and prior vectors must have the same nonzero row count")
    return U.T @ Q / U.shape[0]


def gravity_lowrank_exact(U, V, prior: LowRankPrior) -> tuple[float, float]:
    """g^P both ways: (double sum of (U V^T - Q R^T)^2 / n^2, Gramian form)."""
    U, V = _pair(U, V)
    if prior.n != U.shape[0]:
        raise UsageError(f"prior has {prior.n} rows, embeddings have {U.shape[0]}")
    n = U.shape[0]
    D = U @ V.T - prior.q @ prior.r.T
    double_sum = float(np.sum(D * D)) / (n * n)
    G = exact_gramians(U, V)
    H_u, H_v = weighted_embeddings(U, prior.q), weighted_embeddings(V, prior.r)
    gram_form = G.value() - 2.0 * linalg.frob_inner(H_u, H_v) + prior.constant()
    return double_sum, gram_form


def ghat_p_i(u, v, q, r, G: GramianPair, H_u, H_v) -> float:
    """<u, G_v u> + <v, G_u v> - 2 <u, H_v q> - 2 <v, H_u r>."""
    u, v = linalg.as_vec(u), linalg.as_vec(v)
    q, r = linalg.as_vec(q), linalg.as_vec(r)
    H_u = np.asarray(H_u, dtype=np.float64)
    H_v = np.asarray(H_v, dtype=np.float64)
    if H_u.shape != (u.size, q.size) or H_v.shape != (v.size, r.size):
        raise UsageError("weighted-embedding estimates must be (k, k_P)")
    return ghat_i(u, v, G) - 2.0 * float(u @ (H_v @ q)) - 2.0 * float(v @ (H_u @ r))


def ghat_p_grad_batch(U, V, Qb, Rb, G: GramianPair, H_u, H_v) -> tuple[np.ndarray, np.ndarray]:
    gu, gv = ghat_grad_batch(U, V, G)
    return gu - 2.0 * Qb @ np.asarray(H_v).T, gv - 2.0 * Rb @ np.asarray(H_u).T


def ghat_p_batch(U, V, Qb, Rb, G: GramianPair, H_u, H_v) -> np.ndarray:
    return (ghat_batch(U, V, G)
            - 2.0 * np.einsum("bi,ij,bj->b", U, H_v, Qb)
            - 2.0 * np.einsum("bi,ij,bj->b", V, H_u, Rb))


def h_update_sogram(H, batch_emb, batch_prior, alpha: float) -> np.ndarray:
    """H <- (1 - alpha) H + alpha * mean_{i in B} emb_i prior_i^T."""
    if not 0.0 < alpha <= 1.0:
        raise UsageError(f"alpha must lie in (0, 1], got {alpha}")
    E = np.atleast_2d(np.asarray(batch_emb, dtype=np.float64))
    P = np.atleast_2d(np.asarray(batch_prior, dtype=np.float64))
    if E.shape[0] == 0:
        raise UsageError("empty batch")
    return (1.0 - alpha) * np.asarray(H, dtype=np.float64) + alpha * weighted_embeddings(E, P)


@dataclass
class PriorCache:
    """Running sums T = (1/n) sum_i cached_i prior_i^T backed by an EmbeddingCache."""

    T_u: np.ndarray
    T_v: np.ndarray


def h_cache_init(cache: EmbeddingCache, prior: LowRankPrior) -> PriorCache:
    return PriorCache(weighted_embeddings(cache.cached_u, prior.q), weighted_embeddings(cache.cached_v, prior.r))


def h_estimate_sagram(tcache: PriorCache, cache: EmbeddingCache, prior: LowRankPrior, idx,
                      fresh_u, fresh_v, beta: str = "saga") -> tuple[np.ndarray, np.ndarray]:
    """H = T + beta * (fresh - cached) prior^T, same batch convention as :func:`sagram_estimate`."""
    idx = _indices(cache.n, idx)
    fresh_u = _fresh(idx, fresh_u)
    fresh_v = _fresh(idx, fresh_v)
    if beta == "avg":
        keep = _first_occurrence(idx)
        sel, fu, fv = idx[keep], fresh_u[keep], fresh_v[keep]
        coef = 1.0 / cache.n
    elif beta == "saga":
        sel, fu, fv = idx, fresh_u, fresh_v
        coef = 1.0 / idx.size
    else:
        raise UsageError(f"beta mode must be 'avg' or 'saga', got {beta!r}")
    H_u = tcache.T_u + coef * (fu - cache.cached_u[sel]).T @ prior.q[sel]
    H_v = tcache.T_v + coef * (fv - cache.cached_v[sel]).T @ prior.r[sel]
    return H_u, H_v


def h_commit_sagram(tcache: PriorCache, cache: EmbeddingCache, prior: LowRankPrior, idx,
                    fresh_u, fresh_v) -> None:
    """T += (1/n)(fresh - cached) prior^T over distinct indices. Call before :func:`sagram_commit`."""
    idx = _indices(cache.n, idx)
    fresh_u = _fresh(idx, fresh_u)
    fresh_v = _fresh(idx, fresh_v)
    keep = _first_occurrence(idx)
    sel, fu, fv = idx[keep], fresh_u[keep], fresh_v[keep]
    tcache.T_u = tcache.T_u + (fu - cache.cached_u[sel]).T @ prior.q[sel] / cache.n
    tcache.T_v = tcache.T_v + (fv - cache.cached_v[sel]).T @ prior.r[sel] / cache.n


# --------------------------------------------------------------------------
# Estimator state machines used by the trainer and the replay harness

KINDS = ("exact", "sampling", "sagram", "sogram")


@dataclass(frozen=True)
class EstimatorKind:
    kind: str
    alpha: float = 0.01
    beta: str = "saga"
    project: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown estimator {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta not in ("avg", "saga"):
            raise UsageError(f"beta mode must be 'avg' or 'saga', got {self.beta!r}")

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        """``exact``, ``sampling``, ``sogram:0.01``, ``sagram:avg``, ``sagram:saga:noproj``."""
        parts = text.strip().split(":")
        kind = parts[0]
        if kind == "sogram":
            if len(parts) != 2:
                raise UsageError("sogram needs a rate, e.g. sogram:0.01")
            try:
                return cls("sogram", alpha=float(parts[1]))
            except ValueError:
                raise UsageError(f"bad sogram rate {parts[1]!r}") from None
        if kind == "sagram":
            beta = parts[1] if len(parts) > 1 else "saga"
            project = not (len(parts) > 2 and parts[2] == "noproj")
            if len(parts) > 3 or (len(parts) == 3 and parts[2] not in ("proj", "noproj")):
                raise UsageError(f"bad sagram spec {text!r}")
            return cls("sagram", beta=beta, project=project)
        if len(parts) != 1:
            raise UsageError(f"bad estimator spec {text!r}")
        return cls(kind)

    def label(self) -> str:
        if self.kind == "sogram":
            return f"sogram:{self.alpha:g}"
        if self.kind == "sagram":
            return f"sagram:{self.beta}" + ("" if self.project or self.beta == "avg" else ":noproj")
        return self.kind


@dataclass
class Estimator:
    """Single-writer Gramian estimator.

    Per step the caller feeds the Gramian batch to :meth:`update` (which
    returns the estimate used for the gradient) and, after the parameter step,
    the gradient batch to :meth:`commit`. ``exact`` estimators need the full
    set of embeddings in :meth:`update` instead.
    """

    spec: EstimatorKind
    n: int
    k: int
    prior: LowRankPrior | None = None
    cache_cap: int = DEFAULT_CACHE_CAP
    current: GramianPair = field(init=False)
    H: tuple[np.ndarray, np.ndarray] | None = field(init=False, default=None)
    cache: EmbeddingCache | None = field(init=False, default=None)
    tcache: PriorCache | None = field(init=False, default=None)

    def __post_init__(self):
        self.current = GramianPair.zeros(self.k)
        if self.prior is not None:
            if self.prior.n != self.n:
                raise UsageError(f"prior has {self.prior.n} rows, dataset has {self.n}")
            zero = np.zeros((self.k, self.prior.rank))
            self.H = (zero, zero.copy())
        if self.spec.kind == "sagram" and self.n * self.k > self.cache_cap:
            raise UsageError(f"SAGram cache of n*k = {self.n * self.k} exceeds cap {self.cache_cap}")

    @property
    def needs_full_pass(self) -> bool:
        return self.spec.kind == "exact"

    @property
    def needs_init(self) -> bool:
        return self.spec.kind == "sagram" and self.cache is None

    def initialize(self, U_all, V_all) -> None:
        """Fill SAGram caches from a full pass at the initial parameters."""
        if self.spec.kind != "sagram":
            return
        self.cache = sagram_init(U_all, V_all, self.cache_cap)
        self.current = GramianPair(self.cache.S_u.copy(), self.cache.S_v.copy())
        if self.prior is not None:
            self.tcache = h_cache_init(self.cache, self.prior)
            self.H = (self.tcache.T_u.copy(), self.tcache.T_v.copy())

    def update(self, idx, U, V) -> GramianPair:
        kind = self.spec.kind
        idx = np.asarray(idx, dtype=np.int64)
        if kind == "exact":
            if U.shape[0] != self.n:
                raise UsageError("exact estimator needs embeddings for every example")
            self.current = exact_gramians(U, V)
            if self.prior is not None:
                self.H = (weighted_embeddings(U, self.prior.q), weighted_embeddings(V, self.prior.r))
        elif kind == "sampling":
            self.current = sampling_estimate(U, V)
            if self.prior is not None:
                self.H = (weighted_embeddings(U, self.prior.q[idx]), weighted_embeddings(V, self.prior.r[idx]))
        elif kind == "sogram":
            a = self.spec.alpha
            self.current = sogram_update(self.current, U, V, a)
            if self.prior is not None:
                self.H = (h_update_sogram(self.H[0], U, self.prior.q[idx], a),
                          h_update_sogram(self.H[1], V, self.prior.r[idx], a))
        else:
            if self.cache is None:
                raise UsageError("SAGram estimator used before initialize()")
            self.current = sagram_estimate(self.cache, idx, U, V, self.spec.beta, self.spec.project)
            if self.prior is not None:
                self.H = h_estimate_sagram(self.tcache, self.cache, self.prior, idx, U, V, self.spec.beta)
        return self.current

    def commit(self, idx, U, V) -> None:
        if self.spec.kind != "sagram":
            return
        if self.cache is None:
            raise UsageError("SAGram estimator used before initialize()")
        if self.prior is not None:
            h_commit_sagram(self.tcache, self.cache, self.prior, idx, U, V)
        sagram_commit(self.cache, idx, U, V)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"G_u": self.current.G_u, "G_v": self.current.G_v}
        if self.H is not None:
            out["H_u"], out["H_v"] = self.H
        if self.cache is not None:
            out.update(cached_u=self.cache.cached_u, cached_v=self.cache.cached_v,
                       S_u=self.cache.S_u, S_v=self.cache.S_v,
                       commits=np.array([self.cache.commits_since_rebuild], dtype=np.float64))
        if self.tcache is not None:
            out.update(T_u=self.tcache.T_u, T_v=self.tcache.T_v)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.current = GramianPair(arrays["G_u"].copy(), arrays["G_v"].copy())
        if "H_u" in arrays:
            self.H = (arrays["H_u"].copy(), arrays["H_v"].copy())
        if "cached_u" in arrays:
            self.cache = EmbeddingCache(arrays["cached_u"].copy(), arrays["cached_v"].copy(),
                                        arrays["S_u"].copy(), arrays["S_v"].copy(),
                                        int(arrays["commits"][0]) if "commits" in arrays else 0)
        if "T_u" in arrays:
            self.tcache = PriorCache(arrays["T_u"].copy(), arrays["T_v"].copy())


# --------------------------------------------------------------------------
# Plain-text Gramian snapshots

def write_snapshot(path, G) -> None:
    """``k`` on the first line, then k rows of k numbers with 17 significant digits."""
    G = linalg.as_square(G)
    lines = [str(G.shape[0])] + [" ".join(f"{x:.17g}" for x in row) for row in G]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path) -> np.ndarray:
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise DataError(f"{path}: cannot read snapshot ({e.strerror})") from e
    if not lines:
        raise DataError(f"{path}: empty snapshot")
    try:
        k = int(lines[0])
        rows = [[float(x) for x in ln.split()] for ln in lines[1:]]
    except ValueError as e:
        raise DataError(f"{path}: malformed snapshot ({e})") from e
    if len(rows) != k or any(len(r) != k for r in rows):
        raise DataError(f"{path}: expected {k} rows of {k} values")
    return np.array(rows, dtype=np.float64).reshape(k, k)


def sigma_squared(U) -> float:
    """E_i ||u_i u_i^T - G||_F^2 over the rows of U (single-point variance)."""
    U = np.asarray(U, dtype=np.float64)
    G = gramian(U)
    # ||uu^T - G||^2 = ||u||^4 - 2 u^T G u + ||G||^2
    sq = np.sum(U * U, axis=1)
    quad = np.einsum("bi,ij,bj->b", U, G, U)
    return float(np.mean(sq * sq - 2.0 * quad) + np.sum(G * G))


def frobenius_distance(A, B) -> float:
    return math.sqrt(float(np.sum((np.asarray(A) - np.asarray(B)) ** 2)))
