"""Ruiz equilibration of conic programs.

Scale factors are rounded to powers of two so scaling and unscaling are exact
in floating point. Rows of a Lorentz or rotated cone block share a single
factor, which keeps every cone invariant under the scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .program import ConeProgram


@dataclass
class Unscaling:
    """Maps scaled iterates back: x = D x', s = s' / E, y = E y'."""

    col_scale: np.ndarray
    row_scale: np.ndarray

    def primal(self, x_scaled):
        return self.col_scale * x_scaled

    def slack(self, s_scaled):
        return s_scaled / self.row_scale

    def dual(self, y_scaled):
        return self.row_scale * y_scaled


def _pow2(v: np.ndarray) -> np.ndarray:
    return np.exp2(np.round(np.log2(v)))


def _row_norms(A: sp.csr_matrix) -> np.ndarray:
    absA = abs(A)
    return np.asarray(absA.max(axis=1).todense()).ravel()


def presolve_scale(program: ConeProgram, iterations: int = 25, tol: float = 0.5):
    """Equilibrate rows and columns of A; return (scaled program, Unscaling).

    The scaled program is ``c' = D c``, ``A' = E A D``, ``b' = E b`` with
    diagonal ``D`` and ``E``. Iterates until all row and column infinity
    norms are within a factor ``2**tol`` of one or ``iterations`` is reached.
    """
    m, n = program.A.shape
    D = np.ones(n)
    E = np.ones(m)
    # row groups: cone blocks that must share one factor
    group = np.empty(m, dtype=np.int64)
    g = 0
    for cone, sl in program.cone_slices():
        if cone.tag in ("soc", "rsoc"):
            group[sl] = g
            g += 1
        else:
            group[sl] = np.arange(g, g + cone.n)
            g += cone.n
    A = program.A.tocsr()
    for _ in range(iterations):
        S = sp.diags(E) @ A @ sp.diags(D)
        rn = _row_norms(S)
        gmax = np.zeros(g)
        np.maximum.at(gmax, group, rn)
        rn = gmax[group]
        cn = np.asarray(abs(S).max(axis=0).todense()).ravel()
        rn[rn == 0] = 1.0
        cn[cn == 0] = 1.0
        if np.all(np.abs(np.log2(rn)) <= tol) and np.all(np.abs(np.log2(cn)) <= tol):
            break
        E = E * np.clip(1.0 / np.sqrt(rn), 1e-4, 1e4)
        D = D * np.clip(1.0 / np.sqrt(cn), 1e-4, 1e4)
    E = _pow2(E)
    D = _pow2(D)
    Dm = sp.diags(D)
    Em = sp.diags(E)
    scaled = ConeProgram(
        program.c * D,
        (Em @ program.A @ Dm).tocsc(),
        program.b * E,
        list(program.cones),
    )
    return scaled, Unscaling(D, E)
