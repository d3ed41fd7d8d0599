# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: sparse LDL^T and MAP residual/Jacobian assembly.

Mirrors ``_pykernels`` exactly (same signatures, same output layout).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef cnp.int64_t idx_t

cdef double RANGE_GUARD_RADIUS = 1e-6


def ldl_etree(Py_ssize_t n, const idx_t[::1] Ap, const idx_t[::1] Ai):
    cdef idx_t[::1] work = np.full(n, -1, dtype=np.int64)
    Lnz_arr = np.zeros(n, dtype=np.int64)
    etree_arr = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] Lnz = Lnz_arr
    cdef idx_t[::1] etree = etree_arr
    cdef Py_ssize_t j, p
    cdef idx_t i
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                raise ValueError("matrix is not upper triangular")
            while work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                Lnz[i] += 1
                work[i] = j
                i = etree[i]
    return etree_arr, Lnz_arr


def ldl_factor(Py_ssize_t n, const idx_t[::1] Ap, const idx_t[::1] Ai,
               const double[::1] Ax, const idx_t[::1] Lp, idx_t[::1] Li,
               double[::1] Lx, double[::1] D, double[::1] Dinv,
               const idx_t[::1] etree, const double[::1] signs,
               double delta, double eps):
    cdef cnp.uint8_t[::1] yMarkers = np.zeros(n, dtype=np.uint8)
    cdef double[::1] yVals = np.zeros(n)
    cdef idx_t[::1] yIdx = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] elim = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] nextSpace = np.array(Lp[:n], dtype=np.int64)
    cdef Py_ssize_t k, p, i, j, nnzY, nnzE
    cdef idx_t bidx, nxt, c, tmp
    cdef double yc
    cdef int nreg = 0
    with nogil:
        for k in range(n):
            nnzY = 0
            D[k] = 0.0
            for p in range(Ap[k], Ap[k + 1]):
                bidx = Ai[p]
                if bidx == k:
                    D[k] = Ax[p]
                    continue
                yVals[bidx] = Ax[p]
                nxt = bidx
                if yMarkers[nxt] == 0:
                    yMarkers[nxt] = 1
                    elim[0] = nxt
                    nnzE = 1
                    nxt = etree[bidx]
                    while nxt != -1 and nxt < k:
                        if yMarkers[nxt]:
                            break
                        yMarkers[nxt] = 1
                        elim[nnzE] = nxt
                        nnzE += 1
                        nxt = etree[nxt]
                    while nnzE:
                        nnzE -= 1
                        yIdx[nnzY] = elim[nnzE]
                        nnzY += 1
            for i in range(nnzY - 1, -1, -1):
                c = yIdx[i]
                tmp = nextSpace[c]
                yc = yVals[c]
                for j in range(Lp[c], tmp):
                    yVals[Li[j]] -= Lx[j] * yc
                Li[tmp] = k
                Lx[tmp] = yc * Dinv[c]
                D[k] -= yc * Lx[tmp]
                nextSpace[c] += 1
                yVals[c] = 0.0
                yMarkers[c] = 0
            if signs[k] * D[k] < eps:
                D[k] = signs[k] * delta
                nreg += 1
            Dinv[k] = 1.0 / D[k]
    return nreg


def ldl_solve(Py_ssize_t n, const idx_t[::1] Lp, const idx_t[::1] Li,
              const double[::1] Lx, const double[::1] Dinv, double[::1] x):
    cdef Py_ssize_t i, j
    cdef double xi, acc
    with nogil:
        for i in range(n):
            xi = x[i]
            for j in range(Lp[i], Lp[i + 1]):
                x[Li[j]] -= Lx[j] * xi
        for i in range(n):
            x[i] *= Dinv[i]
        for i in range(n - 1, -1, -1):
            acc = 0.0
            for j in range(Lp[i], Lp[i + 1]):
                acc += Lx[j] * x[Li[j]]
            x[i] -= acc


def pose_edge_nnz(int dim):
    cdef int p = 1 if dim == 2 else 3
    return dim * dim * 2 * p + dim * p + 2 * dim


cdef void _generator(int dim, int k, double* G) noexcept nogil:
    cdef int a
    for a in range(dim * dim):
        G[a] = 0.0
    if dim == 2:
        G[1] = -1.0
        G[2] = 1.0
    elif k == 0:
        G[5] = -1.0
        G[7] = 1.0
    elif k == 1:
        G[2] = 1.0
        G[6] = -1.0
    else:
        G[1] = -1.0
        G[3] = 1.0


def map_residuals_jacobian(
    int dim,
    const double[:, :, ::1] rotations,
    const double[:, ::1] positions,
    const idx_t[::1] edge_i,
    const idx_t[::1] edge_j,
    const double[:, :, ::1] meas_rot,
    const double[:, ::1] meas_trans,
    const double[::1] sqrt_kappa,
    const double[::1] sqrt_tau,
    const idx_t[::1] range_i,
    const idx_t[::1] range_j,
    const double[::1] range_dist,
    const double[::1] inv_sigma,
    const idx_t[::1] rot_col,
    const idx_t[::1] pos_col,
    double range_eps,
    bint want_jacobian,
):
    cdef int d = dim
    cdef int p = 1 if d == 2 else 3
    cdef Py_ssize_t ne = edge_i.shape[0]
    cdef Py_ssize_t nr = range_i.shape[0]
    cdef int rpe = d * d + d
    cdef int nnz_e = d * d * 2 * p + d * p + 2 * d
    res_arr = np.empty(ne * rpe + nr)
    cdef double[::1] res = res_arr
    cdef Py_ssize_t nnz = (ne * nnz_e + nr * 2 * d) if want_jacobian else 0
    rows_arr = np.empty(nnz, dtype=np.int64)
    cols_arr = np.empty(nnz, dtype=np.int64)
    vals_arr = np.empty(nnz)
    cdef idx_t[::1] rows = rows_arr
    cdef idx_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    cdef double G[9]
    cdef double T1[9]
    cdef double T2[9]
    cdef double RiRm[9]
    cdef Py_ssize_t e, q, base
    cdef int a, b, c, k
    cdef idx_t ii, jj
    cdef double sk, st, acc, nrm, sq, diffv, s
    cdef double diff[3]
    cdef int guarded = 0
    with nogil:
        q = 0
        for e in range(ne):
            ii = edge_i[e]
            jj = edge_j[e]
            sk = sqrt_kappa[e]
            st = sqrt_tau[e]
            base = e * rpe
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc = acc + rotations[ii, a, c] * meas_rot[e, c, b]
                    RiRm[a * d + b] = acc
                    res[base + a * d + b] = sk * (rotations[jj, a, b] - acc)
            for a in range(d):
                acc = 0.0
                for c in range(d):
                    acc = acc + rotations[ii, a, c] * meas_trans[e, c]
                res[base + d * d + a] = st * (positions[jj, a] - positions[ii, a] - acc)
            if not want_jacobian:
                continue
            for k in range(p):
                _generator(d, k, G)
                for a in range(d):
                    for b in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc = acc + rotations[jj, a, c] * G[c * d + b]
                        rows[q] = base + a * d + b
                        cols[q] = rot_col[jj] + k
                        vals[q] = sk * acc
                        q += 1
            for k in range(p):
                _generator(d, k, G)
                # T1 = Ri G, T2 = T1 Rm
                for a in range(d):
                    for b in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc = acc + rotations[ii, a, c] * G[c * d + b]
                        T1[a * d + b] = acc
                for a in range(d):
                    for b in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc = acc + T1[a * d + c] * meas_rot[e, c, b]
                        rows[q] = base + a * d + b
                        cols[q] = rot_col[ii] + k
                        vals[q] = -sk * acc
                        q += 1
            for k in range(p):
                _generator(d, k, G)
                for a in range(d):
                    for b in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc = acc + rotations[ii, a, c] * G[c * d + b]
                        T1[a * d + b] = acc
                for a in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc = acc + T1[a * d + c] * meas_trans[e, c]
                    rows[q] = base + d * d + a
                    cols[q] = rot_col[ii] + k
                    vals[q] = -st * acc
                    q += 1
            for a in range(d):
                rows[q] = base + d * d + a
                cols[q] = pos_col[ii] + a
                vals[q] = -st
                q += 1
            for a in range(d):
                rows[q] = base + d * d + a
                cols[q] = pos_col[jj] + a
                vals[q] = st
                q += 1

        base = ne * rpe
        for e in range(nr):
            ii = range_i[e]
            jj = range_j[e]
            sq = 0.0
            for a in range(d):
                diffv = positions[ii, a] - positions[jj, a]
                diff[a] = diffv
                sq = sq + diffv * diffv
            nrm = sqrt(sq)
            if nrm < RANGE_GUARD_RADIUS:
                nrm = sqrt(sq + range_eps)
                guarded += 1
            s = inv_sigma[e]
            res[base + e] = (nrm - range_dist[e]) * s
            if not want_jacobian:
                continue
            for a in range(d):
                rows[q] = base + e
                cols[q] = pos_col[ii] + a
                vals[q] = diff[a] / nrm * s
                q += 1
            for a in range(d):
                rows[q] = base + e
                cols[q] = pos_col[jj] + a
                vals[q] = -diff[a] / nrm * s
                q += 1
    return res_arr, rows_arr, cols_arr, vals_arr, guarded
