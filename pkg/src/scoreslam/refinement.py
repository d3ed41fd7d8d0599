"""Levenberg-Marquardt refinement of the maximum-likelihood cost.

Rotations are updated on the right, ``R <- R Exp(delta)``; translations and
landmark positions additively. The anchor pose (first pose of robot 0) is held
fixed to remove the gauge freedom. Residuals and Jacobian triplets come from
the compiled kernels (or their NumPy twin), and the damped normal equations
are solved with the sparse LDL^T factorization.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import exp_so, tangent_dim
from .linalg import SparseLDL, fill_reducing_order
from .problem import ProblemError, RaSlamProblem, Solution, check_solution
from .projection import project_rotation

logger = logging.getLogger(__name__)

MAX_DAMPING = 1e32
ORTHONORMAL_DRIFT = 1e-9


@dataclass
class RefinementSettings:
    max_iterations: int = 200
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    relative_cost_tolerance: float = 1e-10
    gradient_norm_tolerance: float = 1e-8
    range_epsilon: float = 1e-12

    def __post_init__(self) -> None:
        for name in (
            "max_iterations",
            "initial_damping",
            "relative_cost_tolerance",
            "gradient_norm_tolerance",
            "range_epsilon",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_increase > 1.0 > self.damping_decrease > 0.0:
            raise ValueError("need damping_increase > 1 > damping_decrease > 0")


class Termination(str, enum.Enum):
    GRADIENT = "Gradient"
    COST_CHANGE = "CostChange"
    MAX_ITERATIONS = "MaxIterations"
    DAMPING_OVERFLOW = "DampingOverflow"


@dataclass
class RefinementReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination_reason: Termination
    cost_trace: list[float] = field(default_factory=list)
    guarded_ranges: int = 0

    def to_dict(self) -> dict:
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "termination_reason": self.termination_reason.value,
            "cost_trace": list(self.cost_trace),
            "guarded_ranges": self.guarded_ranges,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RefinementReport":
        return cls(
            data["initial_cost"],
            data["final_cost"],
            data["iterations"],
            Termination(data["termination_reason"]),
            list(data["cost_trace"]),
            data.get("guarded_ranges", 0),
        )


class _Structure:
    """Index arrays that map the problem onto the kernel's flat arrays."""

    def __init__(self, problem: RaSlamProblem):
        d = problem.dim
        p = tangent_dim(d)
        self.dim, self.p = d, p
        self.poses = problem.pose_keys()
        self.landmarks = list(problem.landmark_variables)
        self.nodes = self.poses + self.landmarks
        node_index = {k: i for i, k in enumerate(self.nodes)}
        npose = len(self.poses)
        self.rot_col = np.arange(npose, dtype=np.int64) * p
        self.pos_col = npose * p + np.arange(len(self.nodes), dtype=np.int64) * d
        self.num_params = npose * p + len(self.nodes) * d
        pe = problem.relative_pose_edges
        self.edge_i = np.array([node_index[m.from_key] for m in pe], dtype=np.int64)
        self.edge_j = np.array([node_index[m.to_key] for m in pe], dtype=np.int64)
        self.meas_rot = np.array([m.rotation for m in pe], dtype=float).reshape(-1, d, d)
        self.meas_trans = np.array([m.translation for m in pe], dtype=float).reshape(-1, d)
        self.sqrt_kappa = np.sqrt(np.array([m.kappa for m in pe], dtype=float))
        self.sqrt_tau = np.sqrt(np.array([m.tau for m in pe], dtype=float))
        re = problem.range_edges
        self.range_i = np.array([node_index[m.from_key] for m in re], dtype=np.int64)
        self.range_j = np.array([node_index[m.to_key] for m in re], dtype=np.int64)
        self.range_dist = np.array([m.distance for m in re], dtype=float)
        self.inv_sigma = 1.0 / np.array([m.sigma for m in re], dtype=float)
        self.num_residuals = len(pe) * (d * d + d) + len(re)
        # gauge: anchor rotation and translation columns are fixed
        a = node_index[problem.anchor]
        fixed = np.concatenate([self.rot_col[a] + np.arange(p), self.pos_col[a] + np.arange(d)])
        self.fixed = fixed
        free = np.ones(self.num_params, dtype=bool)
        free[fixed] = False
        self.free = np.flatnonzero(free)

    def arrays(self, solution: Solution):
        rot = np.array([solution.rotations[k] for k in self.poses], dtype=float)
        rot = rot.reshape(len(self.poses), self.dim, self.dim)
        pos = np.array([solution.position(k) for k in self.nodes], dtype=float)
        return np.ascontiguousarray(rot), np.ascontiguousarray(pos.reshape(-1, self.dim))

    def evaluate(self, solution: Solution, eps: float, want_jacobian: bool, backend=None):
        rot, pos = self.arrays(solution)
        impl = kernels.backend(backend)
        return impl.map_residuals_jacobian(
            self.dim,
            rot,
            pos,
            self.edge_i,
            self.edge_j,
            self.meas_rot,
            self.meas_trans,
            self.sqrt_kappa,
            self.sqrt_tau,
            self.range_i,
            self.range_j,
            self.range_dist,
            self.inv_sigma,
            self.rot_col,
            self.pos_col,
            float(eps),
            bool(want_jacobian),
        )

    def retract(self, solution: Solution, delta: np.ndarray) -> Solution:
        """Apply a full-length tangent step (anchor entries are zero)."""
        out = solution.copy()
        d, p = self.dim, self.p
        for i, k in enumerate(self.poses):
            w = delta[self.rot_col[i] : self.rot_col[i] + p]
            if np.any(w):
                R = out.rotations[k] @ exp_so(w, d)
                out.rotations[k] = _reorthonormalize(R)
        for i, k in enumerate(self.nodes):
            step = delta[self.pos_col[i] : self.pos_col[i] + d]
            if k.is_pose:
                out.translations[k] = out.translations[k] + step
            else:
                out.landmark_positions[k] = out.landmark_positions[k] + step
        return out


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    d = R.shape[0]
    if np.linalg.norm(R.T @ R - np.eye(d)) <= ORTHONORMAL_DRIFT:
        return R
    return project_rotation(R)


def residuals(
    problem: RaSlamProblem, solution: Solution, range_epsilon: float = 1e-12, backend=None
) -> np.ndarray:
    """Weighted residual vector whose squared norm is the MAP cost.

    Per relative pose edge: sqrt(kappa) vec(R_j - R_i R~) (row-major) then
    sqrt(tau) (t_j - t_i - R_i t~); then (||t_i - t_j|| - d~) / sigma per
    range edge. Near-coincident range endpoints use the guarded norm
    sqrt(||t_i - t_j||^2 + range_epsilon).
    """
    check_solution(problem, solution)
    res, _, _, _, guarded = _Structure(problem).evaluate(solution, range_epsilon, False, backend)
    if guarded:
        logger.warning("%d range residuals evaluated with the coincident-point guard", guarded)
    return res


def jacobian(
    problem: RaSlamProblem, solution: Solution, range_epsilon: float = 1e-12, backend=None
) -> sp.csr_matrix:
    """Jacobian of ``residuals`` w.r.t. right rotation perturbations and additive positions.

    Columns: for each pose (robot-major, time order) ``p`` rotation
    coordinates (1 in 2-D, 3 in 3-D); then ``d`` position coordinates for each
    pose followed by each landmark. The anchor pose's columns are zero.
    """
    check_solution(problem, solution)
    st = _Structure(problem)
    _, rows, cols, vals, _ = st.evaluate(solution, range_epsilon, True, backend)
    keep = ~np.isin(cols, st.fixed)
    J = sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(st.num_residuals, st.num_params)
    )
    return J


def refine(
    problem: RaSlamProblem,
    initial: Solution,
    settings: RefinementSettings | None = None,
    backend=None,
) -> tuple[Solution, RefinementReport]:
    """Minimize the MAP cost from ``initial`` with Levenberg-Marquardt.

    Steps solve ``(J'J + lambda diag(J'J)) dx = -J'r`` over the non-anchor
    parameters; a step is accepted only if it lowers the cost, in which case
    the damping is multiplied by ``damping_decrease``, otherwise by
    ``damping_increase``.
    """
    settings = settings or RefinementSettings()
    check_solution(problem, initial)
    if problem.anchor is None:
        raise ProblemError("problem has no anchor pose")
    st = _Structure(problem)
    eps = settings.range_epsilon
    x = initial.copy()
    res, rows, cols, vals, guarded = st.evaluate(x, eps, True, backend)
    cost = float(res @ res)
    initial_cost = cost
    trace = [cost]
    guard_total = guarded
    lam = settings.initial_damping
    free = st.free
    col_map = np.full(st.num_params, -1, dtype=np.int64)
    col_map[free] = np.arange(len(free))
    order = None
    termination = Termination.MAX_ITERATIONS
    iterations = 0
    nfree = len(free)
    while iterations < settings.max_iterations:
        keep = col_map[cols] >= 0
        J = sp.csr_matrix(
            (vals[keep], (rows[keep], col_map[cols[keep]])), shape=(len(res), nfree)
        )
        g = J.T @ res
        if float(np.linalg.norm(g)) <= settings.gradient_norm_tolerance * (1.0 + cost):
            termination = Termination.GRADIENT
            break
        H = sp.triu(J.T @ J).tocoo()
        hr = np.concatenate([H.row, np.arange(nfree)])
        hc = np.concatenate([H.col, np.arange(nfree)])
        if order is None:
            order = fill_reducing_order(nfree, hr, hc)
        ldl = SparseLDL(nfree, hr, hc, backend=backend, order=order)
        diag = np.maximum(np.asarray(J.power(2).sum(axis=0)).ravel(), 1e-12)
        accepted = False
        while lam <= MAX_DAMPING:
            ldl.factor(np.concatenate([H.data, lam * diag]), delta=1e-12, eps=0.0)
            step = ldl.solve(-g)
            delta = np.zeros(st.num_params)
            delta[free] = step
            cand = st.retract(x, delta)
            cres, crows, ccols, cvals, cguard = st.evaluate(cand, eps, True, backend)
            ccost = float(cres @ cres)
            if np.isfinite(ccost) and ccost < cost:
                accepted = True
                break
            lam *= settings.damping_increase
        if not accepted:
            termination = Termination.DAMPING_OVERFLOW
            break
        iterations += 1
        lam = max(lam * settings.damping_decrease, 1e-300)
        rel_change = (cost - ccost) / max(cost, 1e-300)
        x, res, rows, cols, vals = cand, cres, crows, ccols, cvals
        guard_total += cguard
        cost = ccost
        trace.append(cost)
        logger.debug("LM iteration %d: cost %.12g, damping %.1e", iterations, cost, lam)
        if rel_change < settings.relative_cost_tolerance:
            termination = Termination.COST_CHANGE
            break
    report = RefinementReport(initial_cost, cost, iterations, termination, trace, guard_total)
    logger.info(
        "refinement: cost %.6g -> %.6g in %d iterations (%s)",
        initial_cost,
        cost,
        iterations,
        termination.value,
    )
    return x, report
