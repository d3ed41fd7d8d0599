"""Pure-Python/NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are benchmarked and tested against. Every
function here has the same signature and output layout as its compiled twin.
"""

from __future__ import annotations

import numpy as np

RANGE_GUARD_RADIUS = 1e-6


# sparse LDL^T ---------------------------------------------------------------


def ldl_etree(n, Ap, Ai):
    """Elimination tree and column counts of L for an upper-triangular CSC matrix."""
    work = np.full(n, -1, dtype=np.int64)
    Lnz = np.zeros(n, dtype=np.int64)
    etree = np.full(n, -1, dtype=np.int64)
    Ap = np.asarray(Ap)
    Ai = np.asarray(Ai)
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = int(Ai[p])
            if i > j:
                raise ValueError("matrix is not upper triangular")
            while work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                Lnz[i] += 1
                work[i] = j
                i = int(etree[i])
    return etree, Lnz


def ldl_factor(n, Ap, Ai, Ax, Lp, Li, Lx, D, Dinv, etree, signs, delta, eps):
    """Up-looking numeric LDL^T factorization with dynamic regularization.

    Pivots whose signed value falls below ``eps`` are replaced by
    ``signs[k] * delta``. Returns the number of regularized pivots.
    """
    yMarkers = np.zeros(n, dtype=bool)
    yVals = np.zeros(n)
    yIdx = np.zeros(n, dtype=np.int64)
    elim = np.zeros(n, dtype=np.int64)
    nextSpace = np.array(Lp[:n], dtype=np.int64)
    nreg = 0
    for k in range(n):
        nnzY = 0
        D[k] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            bidx = int(Ai[p])
            if bidx == k:
                D[k] = Ax[p]
                continue
            yVals[bidx] = Ax[p]
            nxt = bidx
            if not yMarkers[nxt]:
                yMarkers[nxt] = True
                elim[0] = nxt
                nnzE = 1
                nxt = int(etree[bidx])
                while nxt != -1 and nxt < k:
                    if yMarkers[nxt]:
                        break
                    yMarkers[nxt] = True
                    elim[nnzE] = nxt
                    nnzE += 1
                    nxt = int(etree[nxt])
                while nnzE:
                    nnzE -= 1
                    yIdx[nnzY] = elim[nnzE]
                    nnzY += 1
        for i in range(nnzY - 1, -1, -1):
            c = int(yIdx[i])
            tmp = int(nextSpace[c])
            yc = yVals[c]
            for j in range(Lp[c], tmp):
                yVals[Li[j]] -= Lx[j] * yc
            Li[tmp] = k
            Lx[tmp] = yc * Dinv[c]
            D[k] -= yc * Lx[tmp]
            nextSpace[c] += 1
            yVals[c] = 0.0
            yMarkers[c] = False
        if signs[k] * D[k] < eps:
            D[k] = signs[k] * delta
            nreg += 1
        Dinv[k] = 1.0 / D[k]
    return nreg


def ldl_solve(n, Lp, Li, Lx, Dinv, x):
    """Overwrite ``x`` with the solution of L D L^T y = x."""
    for i in range(n):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * xi
    x *= Dinv
    for i in range(n - 1, -1, -1):
        acc = 0.0
        for j in range(Lp[i], Lp[i + 1]):
            acc += Lx[j] * x[Li[j]]
        x[i] -= acc


# MAP residuals and Jacobian -----------------------------------------------------


def _generators(dim):
    if dim == 2:
        return np.array([[[0.0, -1.0], [1.0, 0.0]]])
    G = np.zeros((3, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        x, y, z = e
        G[k] = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]
    return G


def pose_edge_nnz(dim):
    p = 1 if dim == 2 else 3
    return dim * dim * 2 * p + dim * p + 2 * dim


def map_residuals_jacobian(
    dim,
    rotations,
    positions,
    edge_i,
    edge_j,
    meas_rot,
    meas_trans,
    sqrt_kappa,
    sqrt_tau,
    range_i,
    range_j,
    range_dist,
    inv_sigma,
    rot_col,
    pos_col,
    range_eps,
    want_jacobian,
):
    """Stacked weighted residuals and Jacobian triplets of the MAP cost.

    ``rotations`` is (num_poses, d, d); ``positions`` is (num_nodes, d) with
    poses first. Pose edges index poses, range edges index nodes. Rotation
    perturbations are on the right (R Exp(delta)); positions are additive.
    Residual layout per pose edge is d^2 rotation rows (row-major) then d
    translation rows; one row per range edge after all pose edges.

    Returns ``(residual, rows, cols, vals, guarded)``; the triplet arrays are
    empty when ``want_jacobian`` is false.
    """
    d = dim
    p = 1 if d == 2 else 3
    G = _generators(d)
    ne = len(edge_i)
    nr = len(range_i)
    rows_per_edge = d * d + d
    nres = ne * rows_per_edge + nr
    res = np.empty(nres)

    Ri = rotations[edge_i]
    Rj = rotations[edge_j]
    ti = positions[edge_i]
    tj = positions[edge_j]
    sk = sqrt_kappa[:, None, None]
    st = sqrt_tau[:, None]
    RiRm = Ri @ meas_rot
    rot_res = sk * (Rj - RiRm)
    Rit = np.einsum("eab,eb->ea", Ri, meas_trans)
    tr_res = st * (tj - ti - Rit)
    block = res[: ne * rows_per_edge].reshape(ne, rows_per_edge)
    block[:, : d * d] = rot_res.reshape(ne, d * d)
    block[:, d * d :] = tr_res

    pi = positions[range_i]
    pj = positions[range_j]
    diff = pi - pj
    sq = np.einsum("ea,ea->e", diff, diff)
    nrm = np.sqrt(sq)
    guarded_mask = nrm < RANGE_GUARD_RADIUS
    nrm = np.where(guarded_mask, np.sqrt(sq + range_eps), nrm)
    res[ne * rows_per_edge :] = (nrm - range_dist) * inv_sigma
    guarded = int(np.count_nonzero(guarded_mask))

    if not want_jacobian:
        empty_i = np.empty(0, dtype=np.int64)
        return res, empty_i, empty_i, np.empty(0), guarded

    nnz_e = pose_edge_nnz(d)
    rows = np.empty((ne, nnz_e), dtype=np.int64)
    cols = np.empty((ne, nnz_e), dtype=np.int64)
    vals = np.empty((ne, nnz_e))
    base = (np.arange(ne) * rows_per_edge)[:, None]
    rci = rot_col[edge_i][:, None]
    rcj = rot_col[edge_j][:, None]
    pci = pos_col[edge_i][:, None]
    pcj = pos_col[edge_j][:, None]
    pos = 0
    ab = np.arange(d * d)
    # rotation rows w.r.t. delta_j, then delta_i
    for k in range(p):
        dj = (sk * (Rj @ G[k])).reshape(ne, d * d)
        rows[:, pos : pos + d * d] = base + ab
        cols[:, pos : pos + d * d] = rcj + k
        vals[:, pos : pos + d * d] = dj
        pos += d * d
    for k in range(p):
        di = (-sk * (Ri @ G[k] @ meas_rot)).reshape(ne, d * d)
        rows[:, pos : pos + d * d] = base + ab
        cols[:, pos : pos + d * d] = rci + k
        vals[:, pos : pos + d * d] = di
        pos += d * d
    a = np.arange(d)
    trow = base + d * d + a
    for k in range(p):
        dk = -st * np.einsum("eab,eb->ea", Ri @ G[k], meas_trans)
        rows[:, pos : pos + d] = trow
        cols[:, pos : pos + d] = rci + k
        vals[:, pos : pos + d] = dk
        pos += d
    rows[:, pos : pos + d] = trow
    cols[:, pos : pos + d] = pci + a
    vals[:, pos : pos + d] = -st
    pos += d
    rows[:, pos : pos + d] = trow
    cols[:, pos : pos + d] = pcj + a
    vals[:, pos : pos + d] = st
    pos += d

    rrows = np.empty((nr, 2 * d), dtype=np.int64)
    rcols = np.empty((nr, 2 * d), dtype=np.int64)
    rvals = np.empty((nr, 2 * d))
    rbase = (ne * rows_per_edge + np.arange(nr))[:, None]
    g = diff / nrm[:, None] * inv_sigma[:, None]
    rrows[:, :d] = rbase
    rcols[:, :d] = pos_col[range_i][:, None] + a
    rvals[:, :d] = g
    rrows[:, d:] = rbase
    rcols[:, d:] = pos_col[range_j][:, None] + a
    rvals[:, d:] = -g

    rows = np.concatenate([rows.ravel(), rrows.ravel()])
    cols = np.concatenate([cols.ravel(), rcols.ravel()])
    vals = np.concatenate([vals.ravel(), rvals.ravel()])
    return res, rows, cols, vals, guarded
