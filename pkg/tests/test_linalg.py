import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from scoreslam import kernels
from scoreslam.linalg import SparseLDL, fill_reducing_order


def _random_spd(n, density, seed):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng)
    return sp.triu(B @ B.T + sp.eye(n) * n).tocoo()


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 60), st.floats(0.02, 0.3), st.integers(0, 10_000))
def test_ldl_solves_spd_systems(n, density, seed):
    A = _random_spd(n, density, seed)
    b = np.random.default_rng(seed).standard_normal(n)
    for backend in ("python",) + (("compiled",) if kernels.compiled_available() else ()):
        ldl = SparseLDL(n, A.row, A.col, backend=backend)
        assert ldl.factor(A.data, delta=1e-12, eps=0.0) == 0
        x = ldl.solve(b)
        full = A.toarray() + np.triu(A.toarray(), 1).T
        np.testing.assert_allclose(full @ x, b, atol=1e-9 * (1 + np.abs(b).max()))
        assert ldl.inertia() == (n, 0)


def test_ldl_quasi_definite_inertia(backend):
    rng = np.random.default_rng(4)
    n, m = 8, 5
    H = np.diag(rng.uniform(1, 2, n))
    G = rng.standard_normal((m, n))
    K = np.block([[H, G.T], [G, -np.eye(m)]])
    r, c = np.nonzero(np.triu(K))
    signs = np.r_[np.ones(n), -np.ones(m)]
    ldl = SparseLDL(n + m, r, c, signs=signs, backend=backend)
    ldl.factor(K[r, c], delta=1e-9, eps=0.0)
    assert ldl.inertia() == (n, m)
    b = rng.standard_normal(n + m)
    np.testing.assert_allclose(K @ ldl.solve(b), b, atol=1e-10)


def test_ldl_lower_triangle_and_duplicates_are_summed(backend):
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    rows = np.array([0, 1, 1, 0])
    cols = np.array([0, 0, 1, 0])  # (1,0) below the diagonal, (0,0) twice
    vals = np.array([3.0, 1.0, 3.0, 1.0])
    ldl = SparseLDL(2, rows, cols, backend=backend)
    ldl.factor(vals, delta=1e-12, eps=0.0)
    np.testing.assert_allclose(ldl.solve([1.0, 2.0]), np.linalg.solve(A, [1.0, 2.0]))


def test_ldl_regularizes_zero_pivot(backend):
    ldl = SparseLDL(2, [0, 1], [0, 1], backend=backend)
    assert ldl.factor([1.0, 0.0], delta=1e-6, eps=1e-12) == 1
    np.testing.assert_allclose(ldl.solve([1.0, 1e-6]), [1.0, 1.0])


def test_backends_agree_bitwise():
    if not kernels.compiled_available():
        pytest.skip("compiled kernels not built")
    A = _random_spd(80, 0.05, 2)
    b = np.arange(80.0)
    out = []
    for backend in ("python", "compiled"):
        ldl = SparseLDL(80, A.row, A.col, backend=backend)
        ldl.factor(A.data, delta=1e-12, eps=0.0)
        out.append(ldl.solve(b))
    np.testing.assert_allclose(out[0], out[1], rtol=1e-13, atol=0)


def test_fill_reducing_order_is_permutation_and_reduces_fill():
    # arrow matrix: dense first row/column; natural order fills completely
    n = 60
    rows = np.r_[np.zeros(n - 1, dtype=int), np.arange(n)]
    cols = np.r_[np.arange(1, n), np.arange(n)]
    perm = fill_reducing_order(n, rows, cols)
    assert sorted(perm) == list(range(n))
    vals = np.r_[np.ones(n - 1), np.full(n, float(n))]
    natural = SparseLDL(n, rows, cols, order=np.arange(n))
    ordered = SparseLDL(n, rows, cols)
    assert ordered.nnz_L < natural.nnz_L
    assert ordered.nnz_L == n - 1
    ordered.factor(vals, delta=1e-12, eps=0.0)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).toarray()
    A = A + np.triu(A, 1).T
    b = np.ones(n)
    np.testing.assert_allclose(A @ ordered.solve(b), b, atol=1e-10)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend("fortran")
