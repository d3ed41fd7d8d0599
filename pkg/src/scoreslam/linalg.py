"""Sparse symmetric LDL^T with a fixed fill-reducing ordering.

The symbolic analysis (ordering, elimination tree, column counts) is done once
per sparsity pattern; numeric factorizations then only refill values. Used
for the interior-point KKT systems (quasi-definite, signed pivots) and for
the Levenberg-Marquardt normal equations (positive definite).
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import kernels

logger = logging.getLogger(__name__)


def fill_reducing_order(n: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Symmetric fill-reducing permutation ``p`` (new index k holds old p[k]).

    Minimum degree on A + A^T as computed by SuperLU's column ordering; the
    numeric values handed to SuperLU are a diagonally dominant stand-in so
    only the pattern matters.
    """
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    off = rows != cols
    r = np.concatenate([rows[off], cols[off], np.arange(n)])
    c = np.concatenate([cols[off], rows[off], np.arange(n)])
    v = np.concatenate([np.ones(2 * off.sum()), np.full(n, 2.0 * n + 1.0)])
    pattern = sp.csc_matrix((v, (r, c)), shape=(n, n))
    try:
        lu = spla.splu(pattern, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
        # perm_c maps old column j to new position perm_c[j]; invert it
        perm = np.empty(n, dtype=np.int64)
        perm[np.asarray(lu.perm_c, dtype=np.int64)] = np.arange(n)
    except RuntimeError:  # pragma: no cover - stand-in is never singular
        logger.warning("minimum-degree ordering failed; using reverse Cuthill-McKee")
        perm = reverse_cuthill_mckee(pattern.tocsr(), symmetric_mode=True).astype(np.int64)
    return perm


class SparseLDL:
    """LDL^T factorization of a symmetric matrix with a fixed pattern.

    Args:
        n: matrix size.
        rows, cols: coordinates of the stored entries, any triangle; entries
            with row > col are mirrored to the upper triangle and duplicates
            are summed.
        signs: expected pivot signs (+1 / -1) used by the dynamic
            regularization; all +1 for positive definite matrices.
        backend: kernel backend name, default picks the compiled one.
    """

    def __init__(self, n, rows, cols, signs=None, backend=None, order=None):
        self.n = int(n)
        self._k = kernels.backend(backend)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        self.perm = (
            fill_reducing_order(self.n, rows, cols)
            if order is None
            else np.asarray(order, dtype=np.int64)
        )
        self.pinv = np.empty(self.n, dtype=np.int64)
        self.pinv[self.perm] = np.arange(self.n)
        pr, pc = self.pinv[rows], self.pinv[cols]
        ur, uc = np.minimum(pr, pc), np.maximum(pr, pc)
        # CSC of the permuted upper triangle, column-major then row order
        key = uc * self.n + ur
        uniq, self._slot = np.unique(key, return_inverse=True)
        self.Ai = (uniq % self.n).astype(np.int64)
        col_of = uniq // self.n
        self.Ap = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(self.Ap, col_of + 1, 1)
        self.Ap = np.cumsum(self.Ap).astype(np.int64)
        self.nnz_entries = len(rows)
        self.etree, Lnz = self._k.ldl_etree(self.n, self.Ap, self.Ai)
        self.Lp = np.zeros(self.n + 1, dtype=np.int64)
        self.Lp[1:] = np.cumsum(Lnz)
        nnzL = int(self.Lp[-1])
        self.Li = np.zeros(nnzL, dtype=np.int64)
        self.Lx = np.zeros(nnzL)
        self.D = np.zeros(self.n)
        self.Dinv = np.zeros(self.n)
        s = np.ones(self.n) if signs is None else np.asarray(signs, dtype=float)
        self.signs = np.ascontiguousarray(s[self.perm])
        self.num_regularized = 0

    @property
    def nnz_L(self) -> int:
        return int(self.Lp[-1])

    def factor(self, values, delta: float = 1e-9, eps: float = 1e-13) -> int:
        """Numeric factorization of the matrix with entries ``values``.

        Pivots with ``sign * D_kk < eps`` are replaced by ``sign * delta``.
        Returns the number of regularized pivots.
        """
        Ax = np.bincount(self._slot, weights=np.asarray(values, dtype=float), minlength=len(self.Ai))
        self.num_regularized = int(
            self._k.ldl_factor(
                self.n,
                self.Ap,
                self.Ai,
                np.ascontiguousarray(Ax),
                self.Lp,
                self.Li,
                self.Lx,
                self.D,
                self.Dinv,
                self.etree,
                self.signs,
                float(delta),
                float(eps),
            )
        )
        return self.num_regularized

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.asarray(b, dtype=float)[self.perm])
        self._k.ldl_solve(self.n, self.Lp, self.Li, self.Lx, self.Dinv, x)
        out = np.empty_like(x)
        out[self.perm] = x
        return out

    def inertia(self) -> tuple[int, int]:
        """Counts of positive and negative pivots of the last factorization."""
        return int(np.count_nonzero(self.D > 0)), int(np.count_nonzero(self.D < 0))
