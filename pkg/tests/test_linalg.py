import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gramtrain import linalg
from gramtrain.errors import UsageError


def sym(k, seed):
    A = np.random.default_rng(seed).standard_normal((k, k))
    return A + A.T


def test_sym_eig_known_2x2():
    eig = linalg.sym_eig([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(eig.eigenvalues, [3.0, 1.0], atol=1e-14)
    v = eig.eigenvectors[:, 0]
    np.testing.assert_allclose(np.abs(v), [2 ** -0.5, 2 ** -0.5], atol=1e-14)


def test_sym_eig_diagonal_is_exact():
    eig = linalg.sym_eig(np.diag([1.0, -4.0, 2.5]))
    assert eig.eigenvalues.tolist() == [2.5, 1.0, -4.0]


@pytest.mark.parametrize("k", [1, 2, 3, 7, 16])
def test_sym_eig_matches_numpy(k):
    for seed in range(10):
        A = sym(k, seed)
        eig = linalg.sym_eig(A)
        np.testing.assert_allclose(eig.eigenvalues, np.linalg.eigvalsh(A)[::-1], atol=1e-11)
        np.testing.assert_allclose(eig.reconstruct(), A, atol=1e-11)
        np.testing.assert_allclose(eig.eigenvectors.T @ eig.eigenvectors, np.eye(k), atol=1e-12)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(UsageError):
        linalg.sym_eig([[1.0, 2.0], [0.0, 1.0]])


def test_sym_eig_empty():
    assert linalg.sym_eig(np.zeros((0, 0))).eigenvalues.size == 0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)))
def test_sym_eig_reconstructs(M):
    A = M.T @ M - np.eye(M.shape[1])
    eig = linalg.sym_eig(A)
    scale = max(1.0, np.linalg.norm(A))
    assert np.linalg.norm(eig.reconstruct() - A) <= 1e-10 * scale
    assert np.all(np.diff(eig.eigenvalues) <= 0)


def test_psd_project_clamps_and_is_nearest():
    A = np.diag([2.0, -1.0])
    np.testing.assert_allclose(linalg.psd_project(A), np.diag([2.0, 0.0]), atol=1e-15)
    P = np.eye(3)
    assert linalg.psd_project(P) is P


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_psd_project_idempotent(k, seed):
    P = linalg.psd_project(sym(k, seed))
    assert linalg.min_eigenvalue(P) >= -1e-12 * max(1.0, np.linalg.norm(P))
    np.testing.assert_allclose(linalg.psd_project(P), P, atol=1e-10)


def test_frob_inner_and_mismatch():
    assert linalg.frob_inner(np.eye(2), [[1.0, 5.0], [7.0, 3.0]]) == 4.0
    with pytest.raises(UsageError):
        linalg.frob_inner(np.eye(2), np.eye(3))


def test_outer_and_batch_mean():
    np.testing.assert_array_equal(linalg.outer([1.0, 2.0]), [[1.0, 2.0], [2.0, 4.0]])
    U = np.array([[1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_array_equal(linalg.batch_outer_mean(U), [[0.5, 0.0], [0.0, 2.0]])
    with pytest.raises(UsageError):
        linalg.batch_outer_mean(np.zeros((0, 2)))
