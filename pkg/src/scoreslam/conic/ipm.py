"""Primal-dual interior-point method on the homogeneous self-dual embedding.

Internally the program is split into equality rows (zero cone)
``A x = b`` and conic rows ``G x + s = h`` over a product of a nonnegative
orthant and Lorentz cones. Iterates (x, y, z, s, tau, kappa) follow the
Mehrotra predictor-corrector scheme with Nesterov-Todd scaling. Each
iteration factors one quasi-definite KKT matrix

    [ 0   A'  G'   ]
    [ A   0   0    ]
    [ G   0  -W^2  ]

with a regularized sparse LDL^T and solves it with iterative refinement
against the unregularized matrix.
"""

from __future__ import annotations

import logging
import time

import numpy as np
import scipy.sparse as sp

from ..linalg import SparseLDL, fill_reducing_order
from .cones import SymmetricCone
from .program import ConeProgram, SolverResult, SolverSettings, SolverStatus
from .scaling import Unscaling, presolve_scale

logger = logging.getLogger(__name__)

_SQRT_HALF = np.sqrt(0.5)
STEP_FRACTION = 0.99
STATIC_REG = 1e-9
DYNAMIC_EPS = 1e-13
DYNAMIC_DELTA = 1e-7


class _SplitProgram:
    """Zero rows and conic rows of a ConeProgram in solver-internal order."""

    def __init__(self, program: ConeProgram):
        A = program.A.tocsr()
        b = program.b
        m = program.num_constraints
        eq_rows, nn_rows, soc_rows, rsoc_rows = [], [], [], []
        soc_sizes, rsoc_sizes = [], []
        for cone, sl in program.cone_slices():
            idx = np.arange(sl.start, sl.stop)
            if cone.tag == "zero":
                eq_rows.append(idx)
            elif cone.tag == "nonneg":
                nn_rows.append(idx)
            elif cone.tag == "soc":
                soc_rows.append(idx)
                soc_sizes.append(cone.n)
            else:
                rsoc_rows.append(idx)
                rsoc_sizes.append(cone.n)
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        self.eq_rows = cat(eq_rows)
        self.cone_rows = cat(nn_rows + soc_rows + rsoc_rows)
        self.l = int(sum(len(r) for r in nn_rows))
        self.cone = SymmetricCone(self.l, soc_sizes + rsoc_sizes)
        # positions (within the conic rows) of the first two entries of rotated blocks
        start = self.l + sum(soc_sizes)
        firsts = []
        for k in rsoc_sizes:
            firsts.append(start)
            start += k
        self.rsoc_first = np.asarray(firsts, dtype=np.int64)
        self.m = m
        self.Aeq = A[self.eq_rows].tocsr()
        self.beq = b[self.eq_rows].copy()
        G = A[self.cone_rows].tocsr()
        h = b[self.cone_rows].copy()
        self.G = self._rotate_rows(G).tocsr()
        self.h = self.rotate(h)
        self.GT = self.G.T.tocsr()
        self.AeqT = self.Aeq.T.tocsr()

    def _rotate_rows(self, G):
        if not len(self.rsoc_first):
            return G
        mg = G.shape[0]
        i0, i1 = self.rsoc_first, self.rsoc_first + 1
        keep = np.ones(mg, dtype=bool)
        keep[i0] = keep[i1] = False
        ident = np.flatnonzero(keep)
        rows = np.concatenate([ident, i0, i0, i1, i1])
        cols = np.concatenate([ident, i0, i1, i0, i1])
        s = _SQRT_HALF
        vals = np.concatenate([np.ones(len(ident)), np.full(len(i0), s), np.full(len(i0), s),
                               np.full(len(i0), s), np.full(len(i0), -s)])
        T = sp.csr_matrix((vals, (rows, cols)), shape=(mg, mg))
        return T @ G

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """Apply the involutive rotated-cone transform to conic-row vectors."""
        if not len(self.rsoc_first):
            return v
        out = v.copy()
        a, b = v[self.rsoc_first], v[self.rsoc_first + 1]
        out[self.rsoc_first] = _SQRT_HALF * (a + b)
        out[self.rsoc_first + 1] = _SQRT_HALF * (a - b)
        return out

    def to_rows(self, eq_part: np.ndarray, cone_part: np.ndarray) -> np.ndarray:
        """Scatter (equality, conic) row vectors back to program row order."""
        out = np.zeros(self.m)
        out[self.eq_rows] = eq_part
        out[self.cone_rows] = self.rotate(cone_part)
        return out


class _KKTSystem:
    """Regularized LDL^T of the scaled KKT matrix with a fixed pattern."""

    def __init__(self, split: _SplitProgram, n: int, backend=None):
        self.split = split
        self.n = n
        self.p = split.Aeq.shape[0]
        self.mg = split.G.shape[0]
        N = n + self.p + self.mg
        self.N = N
        cone = split.cone
        zoff = n + self.p
        Aeq = split.Aeq.tocoo()
        G = split.G.tocoo()
        rows = [np.arange(N), Aeq.col, G.col]
        cols = [np.arange(N), n + Aeq.row, zoff + G.row]
        static = [np.zeros(N), Aeq.data, G.data]
        dyn_rows, dyn_cols = [], []
        self._blocks = []
        for k, idx in cone.groups.items():
            iu, ju = np.triu_indices(k, 1)
            r = zoff + idx[:, iu]
            c = zoff + idx[:, ju]
            dyn_rows.append(r.ravel())
            dyn_cols.append(c.ravel())
            self._blocks.append((k, iu, ju))
        self.num_static = sum(len(v) for v in static)
        self.static_vals = np.concatenate(static)
        rows = np.concatenate(rows + dyn_rows)
        cols = np.concatenate(cols + dyn_cols)
        scale = max(1.0, float(np.max(np.abs(self.static_vals), initial=0.0)))
        self.reg = STATIC_REG * scale
        self.signs = np.concatenate([np.ones(n), -np.ones(self.p + self.mg)])
        self.ldl = SparseLDL(
            N, rows, cols, signs=self.signs, backend=backend, order=self._ordering()
        )
        self.W = None

    def _ordering(self) -> np.ndarray:
        """Cone rows first, then a minimum-degree order of the (x, y) Schur complement.

        Eliminating the -W^2 blocks first leaves G' W^-2 G on the x block,
        which is positive definite, so no pivot ever rests on the tiny
        static regularization alone.
        """
        n, p, mg = self.n, self.p, self.mg
        cone = self.split.cone
        br = [np.arange(cone.l)]
        bc = [np.arange(cone.l)]
        for k, idx in cone.groups.items():
            br.append(np.repeat(idx, k, axis=1).ravel())
            bc.append(np.tile(idx, (1, k)).ravel())
        br, bc = np.concatenate(br), np.concatenate(bc)
        B = sp.csr_matrix((np.ones(len(br)), (br, bc)), shape=(mg, mg))
        Gp = abs(self.split.G).sign()
        H = (Gp.T @ B @ Gp).tocoo()
        Ap = self.split.Aeq.tocoo()
        rows = np.concatenate([H.row, Ap.col])
        cols = np.concatenate([H.col, n + Ap.row])
        xy = fill_reducing_order(n + p, rows, cols)
        return np.concatenate([np.arange(n + p, n + p + mg), xy])

    def factor(self, W) -> None:
        """Factor the KKT matrix for scaling ``W``."""
        self.W = W
        n, zoff, N = self.n, self.n + self.p, self.N
        cone = self.split.cone
        vals = self.static_vals.copy()
        diag = np.zeros(N)
        diag[:n] = self.reg
        diag[n:] = -self.reg
        l = cone.l
        diag[zoff : zoff + l] -= W.d**2
        off = []
        for (k, iu, ju), (idx, blocks) in zip(self._blocks, W.squared_blocks()):
            dk = np.arange(k)
            diag[zoff + idx] -= blocks[:, dk, dk]
            off.append(-blocks[:, iu, ju].ravel())
        vals[:N] = diag
        vals = np.concatenate([vals] + off)
        self.ldl.factor(vals, delta=DYNAMIC_DELTA, eps=DYNAMIC_EPS)

    def matvec(self, u: np.ndarray) -> np.ndarray:
        n, p = self.n, self.p
        s = self.split
        ux, uy, uz = u[:n], u[n : n + p], u[n + p :]
        out = np.empty_like(u)
        out[:n] = s.AeqT @ uy + s.GT @ uz
        out[n : n + p] = s.Aeq @ ux
        out[n + p :] = s.G @ ux - self.W.apply_squared(uz)
        return out

    def solve(self, rhs: np.ndarray, steps: int) -> np.ndarray:
        u = self.ldl.solve(rhs)
        bnorm = 1.0 + float(np.max(np.abs(rhs)))
        for _ in range(steps):
            r = rhs - self.matvec(u)
            if float(np.max(np.abs(r))) <= 1e-14 * bnorm:
                break
            u += self.ldl.solve(r)
        return u


class _Metrics:
    __slots__ = ("pres", "dres", "gap", "pcost", "dcost", "x", "y", "s")

    def merit(self) -> float:
        """Largest of the residuals and the relative gap (smaller is better)."""
        rel_gap = self.gap / max(1.0, abs(self.pcost), abs(self.dcost))
        return max(self.pres, self.dres, rel_gap)


class InteriorPointSolver:
    """Homogeneous self-dual interior-point solver for one program."""

    def __init__(self, program: ConeProgram, settings: SolverSettings, backend=None):
        self.original = program
        self.settings = settings
        if settings.scale:
            self.program, self.unscaling = presolve_scale(program)
        else:
            self.program = program
            self.unscaling = Unscaling(np.ones(program.num_variables), np.ones(program.num_constraints))
        self.split = _SplitProgram(self.program)
        self.n = self.program.num_variables
        self.kkt = _KKTSystem(self.split, self.n, backend=backend)
        self._borig = np.linalg.norm(program.b)
        self._corig = np.linalg.norm(program.c)

    # helpers ---------------------------------------------------------------

    def _unscale(self, x, y, z, s):
        sp_ = self.split
        u = self.unscaling
        x_o = u.primal(x)
        y_o = u.dual(sp_.to_rows(y, z))
        s_o = u.slack(sp_.to_rows(np.zeros(len(y)), s))
        return x_o, y_o, s_o

    def _metrics(self, x, y, z, s, tau) -> _Metrics:
        P = self.original
        x_o, y_o, s_o = self._unscale(x / tau, y / tau, z / tau, s / tau)
        m = _Metrics()
        m.x, m.y, m.s = x_o, y_o, s_o
        m.pres = float(np.linalg.norm(P.A @ x_o + s_o - P.b)) / (1.0 + self._borig)
        m.dres = float(np.linalg.norm(P.A.T @ y_o + P.c)) / (1.0 + self._corig)
        m.pcost = float(P.c @ x_o)
        m.dcost = float(-P.b @ y_o)
        m.gap = float(s @ z) / tau**2
        return m

    def _converged(self, m: _Metrics, factor: float = 1.0) -> bool:
        st = self.settings
        eps_abs, eps_rel = st.eps_abs * factor, st.eps_rel * factor
        gap_ok = m.gap <= eps_abs or m.gap <= eps_rel * max(abs(m.pcost), abs(m.dcost))
        return m.pres <= eps_rel and m.dres <= eps_rel and gap_ok

    def _initial_point(self):
        sp_ = self.split
        cone = sp_.cone
        n, p = self.n, len(sp_.beq)
        self.kkt.factor(cone.identity_scaling())
        steps = self.settings.refinement_steps
        # primal: min ||s|| s.t. G x + s = h, A x = b
        u = self.kkt.solve(np.concatenate([np.zeros(n), sp_.beq, sp_.h]), steps)
        x = u[:n]
        s = -u[n + p :]
        # dual: min ||z|| s.t. G'z + A'y + c = 0
        u = self.kkt.solve(np.concatenate([-self.program.c, np.zeros(p), np.zeros(len(sp_.h))]), steps)
        y = u[n : n + p]
        z = u[n + p :]
        for v in (s, z):
            if cone.dim:
                t = -cone.min_eig(v)
                if t >= -1e-8 * max(np.linalg.norm(v), 1.0):
                    v += (1.0 + t) * cone.e
        return x, y, z, s

    # main loop -------------------------------------------------------------

    def run(self) -> SolverResult:
        st = self.settings
        t0 = time.perf_counter()
        sp_ = self.split
        cone = sp_.cone
        c, b, h = self.program.c, sp_.beq, sp_.h
        G, GT, Aeq, AeqT = sp_.G, sp_.GT, sp_.Aeq, sp_.AeqT
        n, p = self.n, len(b)
        steps = st.refinement_steps

        x, y, z, s = self._initial_point()
        tau, kappa = 1.0, 1.0
        status = SolverStatus.MAX_ITERATIONS
        m = self._metrics(x, y, z, s, tau)
        best = m
        it = 0
        small_steps = 0
        for it in range(st.max_iterations + 1):
            m = self._metrics(x, y, z, s, tau)
            finite = np.isfinite(m.merit())
            if finite and m.merit() <= best.merit():
                best = m
            elif not finite or m.merit() > 1e3 * best.merit():
                # the last step destroyed accuracy: the KKT systems have become
                # too ill-conditioned to make further progress
                logger.debug("iteration %d: accuracy lost, stopping", it)
                status = SolverStatus.NUMERICAL_FAILURE
                break
            if st.verbose:
                logger.info(
                    "%3d pcost %.6e dcost %.6e gap %.1e pres %.1e dres %.1e k/t %.1e",
                    it, m.pcost, m.dcost, m.gap, m.pres, m.dres, kappa / tau,
                )
            if self._converged(m):
                status = SolverStatus.OPTIMAL
                break
            cert = self._infeasibility(x, y, z, s)
            if cert is not None:
                status = cert
                break
            if it == st.max_iterations:
                break
            if st.time_limit_seconds is not None and time.perf_counter() - t0 > st.time_limit_seconds:
                break

            rx = AeqT @ y + GT @ z + c * tau
            ry = Aeq @ x - b * tau
            rz = s + G @ x - h * tau
            rt = kappa + c @ x + b @ y + h @ z
            mu = (s @ z + tau * kappa) / (cone.degree + 1)

            W = cone.nt_scaling(s, z)
            lam = W.lam
            try:
                self.kkt.factor(W)
            except (ZeroDivisionError, FloatingPointError):
                status = SolverStatus.NUMERICAL_FAILURE
                break
            v = self.kkt.solve(np.concatenate([-c, b, h]), steps)
            vx, vy, vz = v[:n], v[n : n + p], v[n + p :]
            q = c @ vx + b @ vy + h @ vz

            def direction(sigma, ds_target, dk_target):
                f = 1.0 - sigma
                rhs = np.concatenate([-f * rx, -f * ry, -f * rz - W.apply(cone.jdiv(lam, ds_target))])
                u = self.kkt.solve(rhs, steps)
                ux, uy, uz = u[:n], u[n : n + p], u[n + p :]
                dtau = (-f * rt - dk_target / tau - (c @ ux + b @ uy + h @ uz)) / (q - kappa / tau)
                dx = ux + dtau * vx
                dy = uy + dtau * vy
                dz = uz + dtau * vz
                ds = W.apply(cone.jdiv(lam, ds_target) - W.apply(dz))
                dkappa = (dk_target - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkappa

            def step_length(dz, ds, dtau, dkappa):
                a = min(
                    cone.max_step(lam, W.apply(ds, inverse=True)),
                    cone.max_step(lam, W.apply(dz)),
                )
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            # predictor
            lam_sq = cone.jprod(lam, lam)
            dxa, dya, dza, dsa, dta, dka = direction(0.0, -lam_sq, -tau * kappa)
            alpha_aff = min(1.0, step_length(dza, dsa, dta, dka))
            sigma = (1.0 - alpha_aff) ** 3
            # corrector
            corr = cone.jprod(W.apply(dsa, inverse=True), W.apply(dza))
            ds_t = -lam_sq - corr + sigma * mu * cone.e
            dk_t = -tau * kappa - dta * dka + sigma * mu
            dx, dy, dz, ds, dtau, dkappa = direction(sigma, ds_t, dk_t)
            alpha = min(1.0, STEP_FRACTION * step_length(dz, ds, dtau, dkappa))
            if not np.isfinite(alpha) or not all(
                np.all(np.isfinite(v)) for v in (dx, dy, dz, ds)
            ):
                status = SolverStatus.NUMERICAL_FAILURE
                break
            x = x + alpha * dx
            y = y + alpha * dy
            z = z + alpha * dz
            s = s + alpha * ds
            tau = tau + alpha * dtau
            kappa = kappa + alpha * dkappa
            small_steps = small_steps + 1 if alpha < 1e-8 else 0
            if small_steps >= 3:
                status = SolverStatus.NUMERICAL_FAILURE
                break

        reduced = False
        if status in (SolverStatus.PRIMAL_INFEASIBLE, SolverStatus.DUAL_INFEASIBLE):
            m = self._metrics(x, y, z, s, tau)
        elif status != SolverStatus.OPTIMAL:
            m = best
            if self._converged(m, st.reduced_accuracy_factor):
                logger.info(
                    "solver stopped early (%s); best iterate meets reduced tolerances",
                    status.value,
                )
                status = SolverStatus.OPTIMAL
                reduced = True
        if status in (SolverStatus.PRIMAL_INFEASIBLE, SolverStatus.DUAL_INFEASIBLE):
            objective = float("inf") if status == SolverStatus.PRIMAL_INFEASIBLE else float("-inf")
        else:
            objective = m.pcost
        return SolverResult(
            status=status,
            primal=m.x,
            objective=objective,
            primal_residual=m.pres,
            dual_residual=m.dres,
            duality_gap=max(m.gap, 0.0),
            iterations=it,
            wall_time_seconds=time.perf_counter() - t0,
            dual=m.y,
            slack=m.s,
            dual_objective=m.dcost,
            reduced_accuracy=reduced,
        )

    def _infeasibility(self, x, y, z, s):
        P = self.original
        tol = self.settings.eps_rel
        x_c, y_c, s_c = self._unscale(x, y, z, s)
        by = float(P.b @ y_c)
        if by < 0:
            res = float(np.linalg.norm(P.A.T @ y_c)) / max(1.0, self._corig)
            if res / -by <= tol:
                return SolverStatus.PRIMAL_INFEASIBLE
        cx = float(P.c @ x_c)
        if cx < 0:
            res = float(np.linalg.norm(P.A @ x_c + s_c)) / max(1.0, self._borig)
            if res / -cx <= tol:
                return SolverStatus.DUAL_INFEASIBLE
        return None


def solve(program: ConeProgram, settings: SolverSettings | None = None, backend=None) -> SolverResult:
    """Solve a standard-form conic program.

    Returns a ``SolverResult``; the status says whether an optimal point or
    an infeasibility certificate was found.
    """
    settings = settings or SolverSettings()
    program.validate()
    # a breaking-down iteration may overflow; that is detected and handled
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return InteriorPointSolver(program, settings, backend=backend).run()
