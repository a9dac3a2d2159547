"""Small dense linear algebra for k x k Gramians.

Everything is float64. Matrices are plain ``numpy.ndarray``; the helpers here
only add the few operations the estimators need (rank-1 terms, the Frobenius
inner product, a Jacobi eigensolver and projection onto the PSD cone).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError

SYM_TOL = 1e-12


@dataclass(frozen=True)
class EigenDecomp:
    eigenvalues: np.ndarray  # (k,), descending
    eigenvectors: np.ndarray  # (k, k), column j pairs with eigenvalues[j]

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def as_vec(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise UsageError(f"expected a vector, got shape {u.shape}")
    return u


def as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"expected a square matrix, got shape {A.shape}")
    return A


def outer(u) -> np.ndarray:
    u = as_vec(u)
    return np.multiply.outer(u, u)


def batch_outer_mean(U) -> np.ndarray:
    """(1/|B|) sum_i u_i u_i^T for the rows of ``U``."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] == 0:
        raise UsageError("batch must be a nonempty 2-d array")
    return symmetrize(U.T @ U / U.shape[0])


def frob_inner(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise UsageError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def frob_norm(A) -> float:
    return math.sqrt(frob_inner(A, A))


def symmetrize(A: np.ndarray) -> np.ndarray:
    # BLAS products like U^T U can come back asymmetric in the last ulp.
    if A.size and np.max(np.abs(A - A.T)) > SYM_TOL:
        return 0.5 * (A + A.T)
    return A


@functools.lru_cache(maxsize=64)
def _rounds(k: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Round-robin schedule: k - 1 (or k) rounds of disjoint (p, q) pairs, p < q,
    together covering every off-diagonal pair exactly once."""
    m = k + (k % 2)
    players = list(range(m))
    out = []
    for _ in range(m - 1):
        pairs = sorted((min(a, b), max(a, b)) for a, b in zip(players[: m // 2], players[::-1][: m // 2])
                       if a < k and b < k)
        out.append((np.array([p for p, _ in pairs], dtype=np.intp), np.array([q for _, q in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(out)


def sym_eig(A) -> EigenDecomp:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Each sweep visits every (p, q) pair once in round-robin order; the pairs
    of a round are disjoint, so their Givens rotations commute and are applied
    together as one orthogonal matrix. Sweeps stop once the off-diagonal
    Frobenius norm is below ``1e-12 * ||A||_F``.
    """
    A = as_square(A).copy()
    k = A.shape[0]
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise UsageError("sym_eig expects a symmetric matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(k)
    if not np.all(np.isfinite(A)):
        raise NumericalError("sym_eig: non-finite input")
    if k == 0:
        return EigenDecomp(np.zeros(0), V)
    target = 1e-12 * np.linalg.norm(A)
    max_sweeps = 30 * k * k
    rounds = _rounds(k)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off <= target:
            break
        for P, Q in rounds:
            apq = A[P, Q]
            app, aqq = A[P, P], A[Q, Q]
            # entries negligible against both pivots are zeroed without rotating
            skip = (np.abs(apq) < 1e-300) | (np.abs(apq) < 1e-18 * np.minimum(np.abs(app), np.abs(aqq)))
            if np.all(skip):
                A[P, Q] = A[Q, P] = 0.0
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                tau = (aqq - app) / (2.0 * np.where(skip, 1.0, apq))
                t = np.where(np.abs(tau) > 1e150, 0.5 / tau,
                             np.copysign(1.0, tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau)))
            t = np.where(skip, 0.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            J = np.eye(k)
            J[P, P] = c
            J[Q, Q] = c
            J[P, Q] = s
            J[Q, P] = -s
            A = J.T @ A @ J
            A[P, Q] = A[Q, P] = 0.0
            V = V @ J
    else:
        raise NumericalError(f"Jacobi did not converge after {max_sweeps} sweeps (k={k})")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return EigenDecomp(w[order], V[:, order])


def psd_project(A) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clamp negative eigenvalues to zero."""
    A = as_square(A)
    try:
        # a Cholesky factor exists only for positive definite A: nothing to clamp
        np.linalg.cholesky(A)
        return A
    except np.linalg.LinAlgError:
        pass
    eig = sym_eig(A)
    if A.shape[0] == 0 or eig.eigenvalues[-1] >= 0.0:
        return A
    clamped = EigenDecomp(np.maximum(eig.eigenvalues, 0.0), eig.eigenvectors)
    return symmetrize(clamped.reconstruct())


def min_eigenvalue(A) -> float:
    return float(sym_eig(A).eigenvalues[-1])
