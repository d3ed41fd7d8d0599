"""Independent reference implementations used as test oracles.

Nothing here calls the package's solver, kernels or relaxation builder; the
oracles re-derive expected values from first principles (closed forms,
brute force, dense linear algebra or cvxpy).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from scoreslam.problem import RaSlamProblem, Solution


# geometry ---------------------------------------------------------------------


def hat_oracle(w: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        return np.array([[0.0, -w[0]], [w[0], 0.0]])
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def retract_oracle(R: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Right perturbation via the dense matrix exponential."""
    return R @ sla.expm(hat_oracle(w, R.shape[0]))


def nearest_rotation_grid_2d(M: np.ndarray, samples: int = 20000) -> np.ndarray:
    """Nearest planar rotation by grid search over the angle plus local refinement."""
    thetas = np.linspace(-np.pi, np.pi, samples, endpoint=False)

    def dist(th):
        c, s = np.cos(th), np.sin(th)
        return (M[0, 0] - c) ** 2 + (M[0, 1] + s) ** 2 + (M[1, 0] - s) ** 2 + (M[1, 1] - c) ** 2

    best = thetas[np.argmin(dist(thetas))]
    step = 2 * np.pi / samples
    for _ in range(60):  # ternary search on the bracketing cell
        lo, hi = best - step, best + step
        grid = np.linspace(lo, hi, 21)
        best = grid[np.argmin(dist(grid))]
        step /= 10.0
        if step < 1e-12:
            break
    c, s = np.cos(best), np.sin(best)
    return np.array([[c, -s], [s, c]])


def random_rotation_oracle(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar rotation via QR with sign fix (independent of the package sampler)."""
    Q, Rm = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q @ np.diag(np.sign(np.diag(Rm)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


# cost and residuals -------------------------------------------------------------


def residual_oracle(problem: RaSlamProblem, sol: Solution) -> np.ndarray:
    """Weighted residual vector in the documented order, computed with plain loops."""
    out = []
    for m in problem.relative_pose_edges:
        Ri, Rj = sol.rotations[m.from_key], sol.rotations[m.to_key]
        out.extend(np.sqrt(m.kappa) * (Rj - Ri @ m.rotation).reshape(-1))
        ti, tj = sol.translations[m.from_key], sol.translations[m.to_key]
        out.extend(np.sqrt(m.tau) * (tj - ti - Ri @ m.translation))
    for m in problem.range_edges:
        diff = sol.position(m.from_key) - sol.position(m.to_key)
        out.append((np.linalg.norm(diff) - m.distance) / m.sigma)
    return np.array(out)


def perturb(problem: RaSlamProblem, sol: Solution, delta: np.ndarray) -> Solution:
    """Apply a tangent vector laid out like the package Jacobian columns."""
    d = problem.dim
    p = 1 if d == 2 else 3
    poses = problem.pose_keys()
    nodes = poses + list(problem.landmark_variables)
    out = sol.copy()
    for i, k in enumerate(poses):
        out.rotations[k] = retract_oracle(sol.rotations[k], delta[i * p : (i + 1) * p])
    base = len(poses) * p
    for i, k in enumerate(nodes):
        step = delta[base + i * d : base + (i + 1) * d]
        if k.is_pose:
            out.translations[k] = sol.translations[k] + step
        else:
            out.landmark_positions[k] = sol.landmark_positions[k] + step
    return out


def finite_difference_jacobian(problem, sol, h: float = 1e-6) -> np.ndarray:
    d = problem.dim
    p = 1 if d == 2 else 3
    n = len(problem.pose_keys()) * p + len(problem.variables()) * d
    r0 = residual_oracle(problem, sol)
    J = np.zeros((r0.size, n))
    for c in range(n):
        e = np.zeros(n)
        e[c] = h
        J[:, c] = (residual_oracle(problem, perturb(problem, sol, e))
                   - residual_oracle(problem, perturb(problem, sol, -e))) / (2 * h)
    return J


# chordal initialization -----------------------------------------------------------


def chordal_oracle(problem: RaSlamProblem) -> dict:
    """Unconstrained rotation least squares with the anchor block fixed to I.

    Minimizes sum kappa ||R_j - R_i R~||_F^2 over d x d matrices by solving the
    sparse normal equations directly.
    """
    d = problem.dim
    poses = problem.pose_keys()
    anchor = problem.anchor
    free = [k for k in poses if k != anchor]
    col = {k: i * d * d for i, k in enumerate(free)}
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for m in problem.relative_pose_edges:
        w = np.sqrt(m.kappa)
        Rt = m.rotation
        # residual entry (a, b): R_j[a, b] - sum_c R_i[a, c] Rt[c, b]
        for a in range(d):
            for b in range(d):
                const = 0.0
                if m.to_key == anchor:
                    const += w * (1.0 if a == b else 0.0)
                else:
                    rows.append(r)
                    cols.append(col[m.to_key] + a * d + b)
                    vals.append(w)
                for c in range(d):
                    coef = -w * Rt[c, b]
                    if m.from_key == anchor:
                        const += coef * (1.0 if a == c else 0.0)
                    else:
                        rows.append(r)
                        cols.append(col[m.from_key] + a * d + c)
                        vals.append(coef)
                rhs.append(-const)
                r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, len(free) * d * d))
    x = spla.spsolve((A.T @ A).tocsc(), A.T @ np.array(rhs))
    out = {anchor: np.eye(d)}
    for k in free:
        out[k] = x[col[k] : col[k] + d * d].reshape(d, d)
    return out


# relaxation in cvxpy --------------------------------------------------------------


def cvxpy_relaxation(problem: RaSlamProblem) -> float:
    """Optimal value of the cone relaxation, formulated independently in cvxpy."""
    import cvxpy as cp

    d = problem.dim
    R = {k: cp.Variable((d, d)) for k in problem.pose_keys()}
    t = {k: cp.Variable(d) for k in problem.variables()}
    cons = [R[problem.anchor] == np.eye(d), t[problem.anchor] == 0]
    cost = 0
    for m in problem.relative_pose_edges:
        i, j = m.from_key, m.to_key
        cost += m.kappa * cp.sum_squares(R[j] - R[i] @ m.rotation)
        cost += m.tau * cp.sum_squares(t[j] - t[i] - R[i] @ m.translation)
    for m in problem.range_edges:
        dist = cp.Variable()
        cons.append(cp.norm(t[m.from_key] - t[m.to_key]) <= dist)
        cost += cp.square(dist - m.distance) / m.sigma**2
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return float(prob.value)


def cvxpy_cone_program(program) -> float:
    """Optimal value of a standard-form cone program ``min c'x, b - Ax in K``."""
    import cvxpy as cp

    x = cp.Variable(program.num_variables)
    A = program.constraint_matrix.toarray()
    cons = []
    i = 0
    for cone in program.cones:
        s = program.constraint_offset[i : i + cone.n] - A[i : i + cone.n] @ x
        if cone.tag == "zero":
            cons.append(s == 0)
        elif cone.tag == "nonneg":
            cons.append(s >= 0)
        elif cone.tag == "soc":
            cons.append(cp.SOC(s[0], s[1:]))
        else:  # rotated: 2 s0 s1 >= ||s2:||^2  <=>  ||(sqrt2 s2:, s0 - s1)|| <= s0 + s1
            cons.append(cp.SOC(s[0] + s[1], cp.hstack([np.sqrt(2) * s[2:], s[0] - s[1]])))
        i += cone.n
    prob = cp.Problem(cp.Minimize(program.objective @ x), cons)
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return float(prob.value)


# trajectory error -----------------------------------------------------------------


def ape_rmse_oracle(P: np.ndarray, Q: np.ndarray, align: bool) -> float:
    """RMSE after (optionally) rigidly aligning P to Q (2-D).

    Uses the closed-form minimum over the rotation angle, cross-checked by a
    dense angle search.
    """
    if not align:
        return float(np.sqrt(np.mean(np.sum((P - Q) ** 2, axis=1))))
    Pc, Qc = P - P.mean(0), Q - Q.mean(0)
    thetas = np.linspace(-np.pi, np.pi, 200001)
    # sum ||R p - q||^2 = const - 2 (cos th * A + sin th * B)
    A = np.sum(Pc[:, 0] * Qc[:, 0] + Pc[:, 1] * Qc[:, 1])
    B = np.sum(Pc[:, 0] * Qc[:, 1] - Pc[:, 1] * Qc[:, 0])
    const = np.sum(Pc**2) + np.sum(Qc**2)
    vals = const - 2 * (np.cos(thetas) * A + np.sin(thetas) * B)
    best = np.sum(Pc**2) + np.sum(Qc**2) - 2 * np.hypot(A, B)  # closed-form minimum
    assert abs(vals.min() - best) <= 1e-6 * (1 + abs(best))
    return float(np.sqrt(max(best, 0.0) / len(P)))
