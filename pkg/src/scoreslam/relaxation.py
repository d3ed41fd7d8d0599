"""Second-order cone relaxation of range-aided SLAM.

The maximum-likelihood problem is rewritten with one auxiliary distance
``d_ij`` per range edge, so that the range cost becomes the quadratic
``(d_ij - d~_ij)^2 / sigma^2``. Dropping the orthogonality constraints on the
rotation blocks and relaxing ``d_ij = ||t_i - t_j||`` to the convex
``d_ij >= ||t_i - t_j||`` yields a second-order cone program whose optimum is
a lower bound on the maximum-likelihood cost.

Decision vector layout (contiguous ranges, in order): rotation blocks
(d^2 scalars each, row-major) for every pose, translations (d scalars) for
every pose, landmark positions (d scalars), auxiliary distances (one per range
edge), epigraph scalars (one per cost summand), and the scalar pinned to 1/2
that is shared by all rotated-cone epigraphs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import (
    ConeProgram,
    ConeProgramBuilder,
    QuadraticTerm,
    SolverResult,
    SolverSettings,
    solve,
)
from .linalg import SparseLDL
from .problem import ProblemError, RaSlamProblem, VariableKey

logger = logging.getLogger(__name__)

CONE_TOLERANCE = 1e-6
ANCHOR_TOLERANCE = 1e-6
POLISH_MAX_ITERATIONS = 20


class RelaxationError(RuntimeError):
    """Raised when a relaxed solution cannot be extracted or is inaccurate."""


@dataclass
class VariableLayout:
    """Offsets of every problem quantity in the flat decision vector."""

    dim: int
    rotation_offsets: dict[VariableKey, int]
    translation_offsets: dict[VariableKey, int]
    landmark_offsets: dict[VariableKey, int]
    aux_offsets: list[int]
    epigraph_offsets: list[int]
    half_index: int
    total_dimension: int

    def rotation_slice(self, key: VariableKey) -> slice:
        o = self.rotation_offsets[key]
        return slice(o, o + self.dim * self.dim)

    def position_slice(self, key: VariableKey) -> slice:
        o = self.translation_offsets[key] if key.is_pose else self.landmark_offsets[key]
        return slice(o, o + self.dim)

    def position_indices(self, key: VariableKey) -> np.ndarray:
        s = self.position_slice(key)
        return np.arange(s.start, s.stop)

    def rotation_indices(self, key: VariableKey) -> np.ndarray:
        """(d, d) array of flat indices of a rotation block, row-major."""
        s = self.rotation_slice(key)
        return np.arange(s.start, s.stop).reshape(self.dim, self.dim)

    def ranges(self) -> list[tuple[int, int]]:
        """All occupied [start, stop) index ranges in ascending order."""
        d = self.dim
        out = [(o, o + d * d) for o in self.rotation_offsets.values()]
        out += [(o, o + d) for o in self.translation_offsets.values()]
        out += [(o, o + d) for o in self.landmark_offsets.values()]
        out += [(o, o + 1) for o in self.aux_offsets]
        out += [(o, o + 1) for o in self.epigraph_offsets]
        out.append((self.half_index, self.half_index + 1))
        return sorted(out)


@dataclass
class RelaxedSolution:
    """Structured optimum of the relaxation.

    Rotation blocks are unconstrained d x d matrices. ``aux_distances`` is
    indexed by range-edge position in ``problem.range_edges``.
    ``epigraph_values`` holds the pinned half variable followed by the
    epigraph scalars, so the flat vector can be rebuilt exactly.
    """

    rotation_blocks: dict[VariableKey, np.ndarray]
    translations: dict[VariableKey, np.ndarray]
    landmark_positions: dict[VariableKey, np.ndarray]
    aux_distances: dict[int, float]
    objective: float
    epigraph_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)

    def position(self, key: VariableKey) -> np.ndarray:
        if key.is_pose:
            return self.translations[key]
        return self.landmark_positions[key]


def _check_buildable(problem: RaSlamProblem) -> None:
    if not problem.pose_keys():
        raise ProblemError("cannot relax an empty problem")
    diagnostics = problem.validate()
    if diagnostics:
        raise ProblemError("problem failed validation: " + "; ".join(diagnostics))


def make_layout(problem: RaSlamProblem, num_summands: int | None = None) -> VariableLayout:
    """Assign flat indices to all relaxation variables."""
    d = problem.dim
    poses = problem.pose_keys()
    offset = 0
    rot = {}
    for k in poses:
        rot[k] = offset
        offset += d * d
    trans = {}
    for k in poses:
        trans[k] = offset
        offset += d
    lms = {}
    for k in problem.landmark_variables:
        lms[k] = offset
        offset += d
    aux = list(range(offset, offset + len(problem.range_edges)))
    offset += len(aux)
    if num_summands is None:
        num_summands = _num_summands(problem)
    # the builder allocates the half variable before the first epigraph scalar
    half = offset
    epi = list(range(offset + 1, offset + 1 + num_summands))
    total = offset + 1 + num_summands
    return VariableLayout(d, rot, trans, lms, aux, epi, half, total)


def _num_summands(problem: RaSlamProblem) -> int:
    return 2 * len(problem.relative_pose_edges) + len(problem.range_edges)


def _pose_edge_terms(layout: VariableLayout, m) -> tuple[QuadraticTerm, QuadraticTerm]:
    """Rotation and translation summands of one relative pose edge."""
    d = layout.dim
    Ri = layout.rotation_indices(m.from_key)
    Rj = layout.rotation_indices(m.to_key)
    sk, st = np.sqrt(m.kappa), np.sqrt(m.tau)
    # sqrt(kappa) * (R_j[a, b] - sum_c R_i[a, c] R~[c, b]), row a*d + b
    rows, cols, vals = [], [], []
    for a in range(d):
        for b in range(d):
            r = a * d + b
            rows.append(r)
            cols.append(Rj[a, b])
            vals.append(sk)
            for c in range(d):
                if m.rotation[c, b] != 0.0:
                    rows.append(r)
                    cols.append(Ri[a, c])
                    vals.append(-sk * m.rotation[c, b])
    rot_term = QuadraticTerm(rows, cols, vals, np.zeros(d * d))
    # sqrt(tau) * (t_j[a] - t_i[a] - sum_c R_i[a, c] t~[c])
    ti = layout.position_indices(m.from_key)
    tj = layout.position_indices(m.to_key)
    rows, cols, vals = [], [], []
    for a in range(d):
        rows += [a, a]
        cols += [tj[a], ti[a]]
        vals += [st, -st]
        for c in range(d):
            if m.translation[c] != 0.0:
                rows.append(a)
                cols.append(Ri[a, c])
                vals.append(-st * m.translation[c])
    trans_term = QuadraticTerm(rows, cols, vals, np.zeros(d))
    return rot_term, trans_term


def build_score(problem: RaSlamProblem) -> tuple[ConeProgram, VariableLayout]:
    """Lower ``problem`` to the relaxed second-order cone program.

    The program contains, in order: zero rows pinning the half variable,
    one rotated cone per cost summand (rotation and translation terms of
    each relative pose edge, then range terms), one second-order cone
    ``(d_ij, t_i - t_j)`` per range edge, and zero rows fixing the anchor
    rotation to the identity and the anchor translation to the origin.

    Raises:
        ProblemError: if the problem is empty or fails validation.
    """
    _check_buildable(problem)
    layout = make_layout(problem)
    d = problem.dim
    builder = ConeProgramBuilder(layout.half_index)
    builder.half_variable()
    for m in problem.relative_pose_edges:
        for term in _pose_edge_terms(layout, m):
            builder.add_quadratic_term(term)
    for aux, m in zip(layout.aux_offsets, problem.range_edges):
        term = QuadraticTerm([0], [aux], [1.0 / m.sigma], [m.distance / m.sigma])
        builder.add_quadratic_term(term)
    for aux, m in zip(layout.aux_offsets, problem.range_edges):
        pi = layout.position_indices(m.from_key)
        pj = layout.position_indices(m.to_key)
        rows = np.concatenate([[0], 1 + np.arange(d), 1 + np.arange(d)])
        cols = np.concatenate([[aux], pi, pj])
        vals = np.concatenate([[-1.0], -np.ones(d), np.ones(d)])
        builder.add_second_order(rows, cols, vals, np.zeros(d + 1))
    anchor = problem.anchor
    rot_idx = layout.rotation_indices(anchor).ravel()
    builder.add_zero(np.arange(d * d), rot_idx, np.ones(d * d), np.eye(d).ravel())
    builder.add_zero(np.arange(d), layout.position_indices(anchor), np.ones(d), np.zeros(d))
    assert builder.num_variables == layout.total_dimension
    assert builder.epigraph_indices == layout.epigraph_offsets
    program = builder.build()
    logger.debug(
        "relaxation: %d variables, %d rows, %d cone blocks",
        program.num_variables,
        program.num_constraints,
        len(program.cones),
    )
    return program, layout


def range_slacks(problem: RaSlamProblem, relaxed: RelaxedSolution) -> np.ndarray:
    """Per range edge ``d_ij - ||t_i - t_j||`` (nonnegative up to solver accuracy)."""
    out = np.empty(len(problem.range_edges))
    for e, m in enumerate(problem.range_edges):
        diff = relaxed.position(m.from_key) - relaxed.position(m.to_key)
        out[e] = relaxed.aux_distances[e] - float(np.linalg.norm(diff))
    return out


def slack_statistics(slacks: np.ndarray) -> dict:
    """Summary of cone slacks; tight cones have slack near zero."""
    if slacks.size == 0:
        return {"count": 0, "min": 0.0, "max": 0.0, "mean": 0.0, "median": 0.0}
    return {
        "count": int(slacks.size),
        "min": float(slacks.min()),
        "max": float(slacks.max()),
        "mean": float(slacks.mean()),
        "median": float(np.median(slacks)),
    }


def extract_relaxed_solution(
    result: SolverResult, layout: VariableLayout, problem: RaSlamProblem
) -> RelaxedSolution:
    """Split the solver's flat primal vector into structured relaxed estimates.

    Raises:
        RelaxationError: if the solve was not optimal, a range cone is
            violated by more than 1e-6, or the anchor rotation is not the
            identity within 1e-6.
    """
    if not result.optimal:
        raise RelaxationError(f"relaxation solve ended with status {result.status.value}")
    x = np.asarray(result.primal, dtype=float)
    if x.shape != (layout.total_dimension,):
        raise RelaxationError("primal vector does not match the layout")
    d = layout.dim
    rotations = {k: x[layout.rotation_slice(k)].reshape(d, d).copy() for k in problem.pose_keys()}
    translations = {k: x[layout.position_slice(k)].copy() for k in problem.pose_keys()}
    landmarks = {k: x[layout.position_slice(k)].copy() for k in problem.landmark_variables}
    aux = {e: float(x[o]) for e, o in enumerate(layout.aux_offsets)}
    tail = x[layout.half_index :].copy()
    relaxed = RelaxedSolution(rotations, translations, landmarks, aux, float(result.objective), tail)
    slacks = range_slacks(problem, relaxed)
    worst = float(-slacks.min()) if slacks.size else 0.0
    anchor_err = float(np.max(np.abs(rotations[problem.anchor] - np.eye(d))))
    relaxed.diagnostics = {
        "slack": slack_statistics(slacks),
        "max_cone_violation": max(worst, 0.0),
        "anchor_rotation_error": anchor_err,
    }
    if worst > CONE_TOLERANCE:
        raise RelaxationError(f"range cone violated by {worst:.3e}")
    if anchor_err > ANCHOR_TOLERANCE:
        raise RelaxationError(f"anchor rotation deviates from identity by {anchor_err:.3e}")
    return relaxed


def flatten_relaxed_solution(relaxed: RelaxedSolution, layout: VariableLayout) -> np.ndarray:
    """Inverse of ``extract_relaxed_solution``: rebuild the flat decision vector."""
    x = np.zeros(layout.total_dimension)
    for k, M in relaxed.rotation_blocks.items():
        x[layout.rotation_slice(k)] = M.ravel()
    for k, t in relaxed.translations.items():
        x[layout.position_slice(k)] = t
    for k, p in relaxed.landmark_positions.items():
        x[layout.position_slice(k)] = p
    for e, o in enumerate(layout.aux_offsets):
        x[o] = relaxed.aux_distances[e]
    x[layout.half_index :] = relaxed.epigraph_values
    return x


def evaluate_relaxed_cost(problem: RaSlamProblem, relaxed: RelaxedSolution) -> float:
    """Relaxed objective: the maximum-likelihood cost with ``d_ij`` in the range terms.

    Raises:
        ProblemError: if a variable or an auxiliary distance is missing.
    """
    R, t = relaxed.rotation_blocks, relaxed.translations
    cost = 0.0
    try:
        for m in problem.relative_pose_edges:
            Ri, Rj = R[m.from_key], R[m.to_key]
            cost += m.kappa * float(np.sum((Rj - Ri @ m.rotation) ** 2))
            r = t[m.to_key] - t[m.from_key] - Ri @ m.translation
            cost += m.tau * float(r @ r)
        for e, m in enumerate(problem.range_edges):
            relaxed.position(m.from_key)
            relaxed.position(m.to_key)
            cost += (relaxed.aux_distances[e] - m.distance) ** 2 / m.sigma**2
    except KeyError as exc:
        raise ProblemError(f"relaxed solution is missing {exc.args[0]}") from None
    return cost


class _SmoothRelaxation:
    """The relaxation with the auxiliary distances eliminated.

    Minimizing over ``d_ij >= ||t_i - t_j||`` gives the range term
    ``max(||t_i - t_j|| - d~_ij, 0)^2 / sigma^2``, so the relaxation equals

        minimize  ||A x - c||^2 + sum_e max(||u_e(x)|| - d~_e, 0)^2 / sigma_e^2

    over the rotation blocks, translations and landmarks ``x`` (the leading
    entries of the layout) with the anchor entries held fixed. The objective
    is convex and continuously differentiable.
    """

    def __init__(self, problem: RaSlamProblem, layout: VariableLayout):
        d = layout.dim
        self.n = layout.half_index - len(layout.aux_offsets)
        rows, cols, vals, offsets = [], [], [], []
        r0 = 0
        for m in problem.relative_pose_edges:
            for term in _pose_edge_terms(layout, m):
                rows.append(term.rows + r0)
                cols.append(term.cols)
                vals.append(term.vals)
                offsets.append(term.offset)
                r0 += len(term.offset)
        def cat(parts, dtype):
            return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

        self.A = sp.csr_matrix(
            (cat(vals, float), (cat(rows, np.int64), cat(cols, np.int64))), shape=(r0, self.n)
        )
        self.c = cat(offsets, float)
        self.I = np.array([layout.position_indices(m.from_key) for m in problem.range_edges],
                          dtype=np.int64).reshape(-1, d)
        self.J = np.array([layout.position_indices(m.to_key) for m in problem.range_edges],
                          dtype=np.int64).reshape(-1, d)
        self.dist = np.array([m.distance for m in problem.range_edges], dtype=float)
        self.inv_sigma = 1.0 / np.array([m.sigma for m in problem.range_edges], dtype=float)
        rot = layout.rotation_indices(problem.anchor).ravel()
        pos = layout.position_indices(problem.anchor)
        self.anchor_indices = np.concatenate([rot, pos])
        self.anchor_values = np.concatenate([np.eye(d).ravel(), np.zeros(d)])
        free = np.ones(self.n, dtype=bool)
        free[self.anchor_indices] = False
        self.free = np.flatnonzero(free)
        self.dim = d

    def _ranges(self, x):
        u = x[self.I] - x[self.J]
        norm = np.linalg.norm(u, axis=1)
        h = np.maximum(norm - self.dist, 0.0) * self.inv_sigma
        return u, norm, h

    def value(self, x: np.ndarray) -> float:
        r = self.A @ x - self.c
        _, _, h = self._ranges(x)
        return float(r @ r + h @ h)

    def gradient_hessian(self, x: np.ndarray):
        r = self.A @ x - self.c
        g = 2.0 * (self.A.T @ r)
        H = 2.0 * (self.A.T @ self.A)
        u, norm, h = self._ranges(x)
        active = np.flatnonzero(h > 0.0)
        if active.size:
            d = self.dim
            # coincident endpoints (possible only for negative measured
            # distances) sit at a kink; use the zero subgradient there
            na = norm[active]
            safe = np.where(na > 0.0, na, 1.0)
            uh = np.where((na > 0.0)[:, None], u[active] / safe[:, None], 0.0)
            coef = 2.0 * h[active] * self.inv_sigma[active]
            gv = coef[:, None] * uh
            np.add.at(g, self.I[active], gv)
            np.add.at(g, self.J[active], -gv)
            outer = uh[:, :, None] * uh[:, None, :]
            s2 = self.inv_sigma[active] ** 2
            curv = np.where(na > 0.0, coef / safe, 0.0)[:, None, None]
            B = 2.0 * s2[:, None, None] * outer + curv * (np.eye(d) - outer)
            Ii, Jj = self.I[active], self.J[active]
            rr, cc, vv = [], [], []
            for a_idx, b_idx, sign in ((Ii, Ii, 1.0), (Jj, Jj, 1.0), (Ii, Jj, -1.0), (Jj, Ii, -1.0)):
                rr.append(np.repeat(a_idx, d, axis=1).ravel())
                cc.append(np.tile(b_idx, (1, d)).ravel())
                vv.append(sign * B.reshape(len(active), -1).ravel())
            H = H + sp.csr_matrix(
                (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=H.shape
            )
        return g, H


def polish_relaxed_solution(
    problem: RaSlamProblem,
    relaxed: RelaxedSolution,
    layout: VariableLayout,
    max_iterations: int = POLISH_MAX_ITERATIONS,
) -> RelaxedSolution:
    """Refine an interior-point solution of the relaxation to full accuracy.

    Interior-point iterates of epigraph-lowered quadratics are accurate only
    to roughly the square root of the final duality gap. Damped Newton steps
    on the equivalent smooth form (see ``_SmoothRelaxation``) starting from
    the interior-point point converge to the exact optimum; a step is taken
    only if it lowers the objective. The returned point is feasible by
    construction (``d_ij = max(||t_i - t_j||, d~_ij)``).
    """
    smooth = _SmoothRelaxation(problem, layout)
    x_full = flatten_relaxed_solution(relaxed, layout)
    x = x_full[: smooth.n].copy()
    x[smooth.anchor_indices] = smooth.anchor_values  # exact gauge
    free = smooth.free
    f = smooth.value(x)
    start = f
    iterations = 0
    grad_norm = float("nan")
    for iterations in range(1, max_iterations + 1):
        g, H = smooth.gradient_hessian(x)
        gf = g[free]
        grad_norm = float(np.linalg.norm(gf))
        if grad_norm <= 1e-14 * (1.0 + f):
            iterations -= 1
            break
        Hf = sp.triu(H[free][:, free]).tocoo()
        diag = Hf.diagonal()
        mu = 1e-12 * max(float(diag.max(initial=0.0)), 1.0)
        rows = np.concatenate([Hf.row, np.arange(len(free))])
        cols = np.concatenate([Hf.col, np.arange(len(free))])
        ldl = SparseLDL(len(free), rows, cols)
        ldl.factor(np.concatenate([Hf.data, np.full(len(free), mu)]), delta=mu, eps=0.0)
        step = ldl.solve(-gf)
        t, accepted = 1.0, False
        for _ in range(30):
            cand = x.copy()
            cand[free] += t * step
            fc = smooth.value(cand)
            if fc < f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            iterations -= 1
            break
        decrease = f - fc
        x, f = cand, fc
        if decrease <= 1e-15 * (1.0 + f):
            break
    d = layout.dim
    rotations = {k: x[layout.rotation_slice(k)].reshape(d, d).copy() for k in problem.pose_keys()}
    translations = {k: x[layout.position_slice(k)].copy() for k in problem.pose_keys()}
    landmarks = {k: x[layout.position_slice(k)].copy() for k in problem.landmark_variables}
    _, norm, _ = smooth._ranges(x)
    aux = {e: float(max(norm[e], smooth.dist[e])) for e in range(len(norm))}
    polished = RelaxedSolution(rotations, translations, landmarks, aux, f)
    # epigraph scalars equal the summand values at the polished point
    padded = np.zeros(layout.total_dimension)
    padded[: smooth.n] = x
    values = [0.5]
    for m in problem.relative_pose_edges:
        for term in _pose_edge_terms(layout, m):
            values.append(term.value(padded))
    for e, m in enumerate(problem.range_edges):
        values.append(((aux[e] - m.distance) / m.sigma) ** 2)
    polished.epigraph_values = np.array(values)
    polished.diagnostics = dict(relaxed.diagnostics)
    polished.diagnostics["polish"] = {
        "iterations": iterations,
        "objective_before": start,
        "objective_after": f,
        "gradient_norm": grad_norm,
    }
    return polished


@dataclass
class ScoreResult:
    """Outcome of building and solving the relaxation."""

    relaxed: RelaxedSolution
    solver: SolverResult
    layout: VariableLayout
    build_seconds: float
    solve_seconds: float


def solve_score(
    problem: RaSlamProblem,
    settings: SolverSettings | None = None,
    backend=None,
    polish: bool = True,
) -> ScoreResult:
    """Build, solve and extract the relaxation of ``problem``.

    With ``polish`` (default) the interior-point solution is refined to full
    accuracy by ``polish_relaxed_solution``.
    """
    t0 = time.perf_counter()
    program, layout = build_score(problem)
    t1 = time.perf_counter()
    result = solve(program, settings, backend=backend)
    t2 = time.perf_counter()
    logger.info(
        "relaxation solved: status %s, objective %.10g, %d iterations, %.2fs",
        result.status.value,
        result.objective,
        result.iterations,
        t2 - t1,
    )
    relaxed = extract_relaxed_solution(result, layout, problem)
    if polish:
        relaxed = polish_relaxed_solution(problem, relaxed, layout)
        info = relaxed.diagnostics["polish"]
        logger.info(
            "polish: objective %.10g -> %.10g in %d Newton steps",
            info["objective_before"],
            info["objective_after"],
            info["iterations"],
        )
    t3 = time.perf_counter()
    return ScoreResult(relaxed, result, layout, t1 - t0, t3 - t1)
