"""Initialization strategies, trajectory error evaluation and trial orchestration."""

from __future__ import annotations

import enum
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .conic import SolverSettings
from .geometry import random_rotation
from .problem import RaSlamProblem, Solution, VariableKey, evaluate_map_cost
from .projection import DEGENERACY_THRESHOLD, ProjectionReport, project_solution
from .refinement import RefinementReport, RefinementSettings, refine
from .relaxation import solve_score
from .simulation import GroundTruth, SimulationConfig, generate

logger = logging.getLogger(__name__)

LOWER_BOUND_TOLERANCE = 1e-6


class InitializationStrategy(str, enum.Enum):
    SCORE = "score"
    GROUND_TRUTH = "gt"
    ODOM_PERFECT = "odom-p"
    ODOM_RANDOM = "odom-r"


class Alignment(str, enum.Enum):
    NONE = "None"
    RIGID_UMEYAMA = "RigidUmeyama"


class InitializationError(ValueError):
    """Raised when a strategy lacks the information it needs."""


# environment and odometry --------------------------------------------------------


def environment_extent(
    truth: Solution | None = None, dim: int = 2, grid_size: float = 10.0
) -> tuple[np.ndarray, np.ndarray]:
    """Box used for random initial poses and landmarks.

    The bounding box of the true positions inflated by 10% when ground truth is
    available, otherwise ``[0, grid_size]^dim``.
    """
    if truth is not None:
        pts = [*truth.translations.values(), *truth.landmark_positions.values()]
        if pts:
            P = np.array(pts, dtype=float)
            lo, hi = P.min(axis=0), P.max(axis=0)
            pad = 0.05 * (hi - lo)
            return lo - pad, hi + pad
    return np.zeros(dim), np.full(dim, float(grid_size))


def odometry_chains(problem: RaSlamProblem) -> dict[tuple[VariableKey, VariableKey], object]:
    """Relative pose edges between consecutive poses of the same robot."""
    chain = {}
    for m in problem.relative_pose_edges:
        a, b = m.from_key, m.to_key
        if a.robot == b.robot and b.time == a.time + 1:
            chain[(a, b)] = m
    return chain


def compose_odometry(
    problem: RaSlamProblem, first_poses: dict[int, tuple[np.ndarray, np.ndarray]]
) -> Solution:
    """Chain each robot's odometry from the given first pose (rotation, translation).

    Raises:
        InitializationError: if a robot's odometry chain is broken.
    """
    chain = odometry_chains(problem)
    out = Solution()
    for r, keys in problem.pose_variables.items():
        R, t = first_poses[r]
        R, t = np.array(R, dtype=float), np.array(t, dtype=float)
        out.rotations[keys[0]], out.translations[keys[0]] = R, t
        for a, b in zip(keys[:-1], keys[1:]):
            m = chain.get((a, b))
            if m is None:
                raise InitializationError(f"no odometry edge {a} -> {b}")
            t = t + R @ m.translation
            R = R @ m.rotation
            out.rotations[b], out.translations[b] = R, t
    return out


def _random_landmarks(problem, out: Solution, lo, hi, rng) -> None:
    for k in problem.landmark_variables:
        out.landmark_positions[k] = rng.uniform(lo, hi)


@dataclass
class InitializationInfo:
    """Side information produced while initializing."""

    strategy: InitializationStrategy
    score_objective: float | None = None
    degenerate: bool = False
    fallback: str | None = None
    projection: ProjectionReport | None = None
    solver_status: str | None = None
    solver_iterations: int = 0
    reduced_accuracy: bool = False
    times: dict = field(default_factory=dict)


def initialize_with_info(
    problem: RaSlamProblem,
    strategy: InitializationStrategy | str,
    ground_truth: Solution | GroundTruth | None = None,
    rng: np.random.Generator | None = None,
    extent: tuple[np.ndarray, np.ndarray] | None = None,
    solver_settings: SolverSettings | None = None,
    degeneracy_threshold: float = DEGENERACY_THRESHOLD,
) -> tuple[Solution, InitializationInfo]:
    """Initial estimate for ``problem`` according to ``strategy``.

    Score solves and projects the relaxation, falling back to Odom-R when the
    relaxed rotations are degenerate. Odometric strategies compose each
    robot's odometry from its true (Odom-P) or a random (Odom-R) first pose,
    and draw landmarks uniformly from the environment box.

    Raises:
        InitializationError: if the strategy needs ground truth that is missing.
    """
    strategy = InitializationStrategy(strategy)
    rng = rng if rng is not None else np.random.default_rng(0)
    truth = ground_truth.solution if isinstance(ground_truth, GroundTruth) else ground_truth
    if extent is None:
        extent = environment_extent(truth, problem.dim)
    lo, hi = extent
    info = InitializationInfo(strategy)
    d = problem.dim

    if strategy in (InitializationStrategy.GROUND_TRUTH, InitializationStrategy.ODOM_PERFECT):
        if truth is None:
            raise InitializationError(f"strategy {strategy.value} requires ground truth")
    if strategy == InitializationStrategy.GROUND_TRUTH:
        return truth.copy(), info
    if strategy == InitializationStrategy.ODOM_PERFECT:
        firsts = {
            r: (truth.rotations[keys[0]], truth.translations[keys[0]])
            for r, keys in problem.pose_variables.items()
        }
        out = compose_odometry(problem, firsts)
        _random_landmarks(problem, out, lo, hi, rng)
        return out, info
    if strategy == InitializationStrategy.ODOM_RANDOM:
        firsts = {
            r: (random_rotation(d, rng), rng.uniform(lo, hi)) for r in problem.pose_variables
        }
        out = compose_odometry(problem, firsts)
        _random_landmarks(problem, out, lo, hi, rng)
        return out, info

    score = solve_score(problem, solver_settings)
    t0 = time.perf_counter()
    solution, report = project_solution(score.relaxed, problem, degeneracy_threshold)
    info.times = {
        "build": score.build_seconds,
        "solve": score.solve_seconds,
        "project": time.perf_counter() - t0,
    }
    info.score_objective = float(score.relaxed.objective)
    info.projection = report
    info.degenerate = report.degenerate
    info.solver_status = score.solver.status.value
    info.solver_iterations = score.solver.iterations
    info.reduced_accuracy = score.solver.reduced_accuracy
    if report.degenerate:
        logger.warning(
            "relaxation degenerate (min determinant %.3g < %.3g); falling back to odom-r",
            report.min_determinant,
            degeneracy_threshold,
        )
        solution, _ = initialize_with_info(
            problem, InitializationStrategy.ODOM_RANDOM, truth, rng, extent
        )
        info.fallback = InitializationStrategy.ODOM_RANDOM.value
    return solution, info


def initialize(problem, strategy, ground_truth=None, rng=None, **kwargs) -> Solution:
    """Initial estimate only; see ``initialize_with_info``."""
    return initialize_with_info(problem, strategy, ground_truth, rng, **kwargs)[0]


# absolute pose error -----------------------------------------------------------------


@dataclass
class ApeResult:
    errors: list[float]
    rmse: float
    mean: float
    median: float
    max: float
    alignment: str
    keys: list[str] = field(default_factory=list)

    @classmethod
    def from_errors(cls, errors: np.ndarray, alignment: Alignment, keys=()) -> "ApeResult":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise ValueError("no poses to evaluate")
        return cls(
            [float(v) for v in e],
            float(np.sqrt(np.mean(e**2))),
            float(np.mean(e)),
            float(np.median(e)),
            float(np.max(e)),
            Alignment(alignment).value,
            [str(k) for k in keys],
        )


def umeyama_rigid(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation t minimizing sum ||R source_i + t - target_i||^2."""
    ms, mt = source.mean(axis=0), target.mean(axis=0)
    C = (target - mt).T @ (source - ms)
    U, _, Vt = np.linalg.svd(C)
    D = np.ones(source.shape[1])
    D[-1] = 1.0 if np.linalg.det(U @ Vt) > 0 else -1.0
    R = (U * D) @ Vt
    return R, mt - R @ ms


def compute_ape(
    estimate: Solution,
    truth: Solution | GroundTruth,
    alignment: Alignment | str = Alignment.RIGID_UMEYAMA,
) -> ApeResult:
    """Per-pose translation errors, optionally after rigid (no scale) alignment.

    Raises:
        ValueError: if the estimate and truth pose keys differ.
    """
    truth = truth.solution if isinstance(truth, GroundTruth) else truth
    alignment = Alignment(alignment)
    keys = sorted(truth.translations)
    if sorted(estimate.translations) != keys:
        raise ValueError("estimate and ground truth have different pose keys")
    P = np.array([estimate.translations[k] for k in keys], dtype=float)
    Q = np.array([truth.translations[k] for k in keys], dtype=float)
    if alignment == Alignment.RIGID_UMEYAMA:
        R, t = umeyama_rigid(P, Q)
        P = P @ R.T + t
    return ApeResult.from_errors(np.linalg.norm(P - Q, axis=1), alignment, keys)


# trials -------------------------------------------------------------------------------


@dataclass
class StrategyReport:
    strategy: str
    initial_ape: ApeResult | None = None
    final_ape: ApeResult | None = None
    initial_cost: float | None = None
    final_cost: float | None = None
    degenerate: bool = False
    fallback: str | None = None
    times: dict = field(default_factory=dict)
    refinement: RefinementReport | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["refinement"] = self.refinement.to_dict() if self.refinement else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyReport":
        data = dict(data)
        for k in ("initial_ape", "final_ape"):
            if data.get(k) is not None:
                data[k] = ApeResult(**data[k])
        if data.get("refinement") is not None:
            data["refinement"] = RefinementReport.from_dict(data["refinement"])
        return cls(**data)


@dataclass
class TrialReport:
    trial_id: int
    seed: int
    config: dict
    ground_truth_cost: float
    score_objective: float | None
    strategies: dict[str, StrategyReport]
    lower_bound_ok: bool
    determinants: dict[str, float] = field(default_factory=dict)
    solver_status: str | None = None
    reduced_accuracy: bool = False

    @property
    def failed(self) -> bool:
        return any(s.error is not None for s in self.strategies.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategies"] = {k: v.to_dict() for k, v in self.strategies.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrialReport":
        data = dict(data)
        data["strategies"] = {k: StrategyReport.from_dict(v) for k, v in data["strategies"].items()}
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "TrialReport":
        return cls.from_dict(json.loads(text))


DEFAULT_STRATEGIES = tuple(InitializationStrategy)


def run_trial(
    config: SimulationConfig,
    strategies=DEFAULT_STRATEGIES,
    trial_id: int = 0,
    solver_settings: SolverSettings | None = None,
    refinement_settings: RefinementSettings | None = None,
    problem_and_truth: tuple[RaSlamProblem, GroundTruth] | None = None,
) -> TrialReport:
    """Generate (or take) one instance, then initialize, refine and evaluate each strategy.

    A failing strategy is recorded in its report instead of aborting the trial.
    The relaxation is solved once and reused by the score strategy.
    """
    if problem_and_truth is None:
        problem, truth = generate(config)
    else:
        problem, truth = problem_and_truth
    strategies = [InitializationStrategy(s) for s in strategies]
    gt_cost = evaluate_map_cost(problem, truth.solution)
    extent = environment_extent(truth.solution, problem.dim)
    reports: dict[str, StrategyReport] = {}
    score_objective = None
    determinants: dict[str, float] = {}
    solver_status = None
    reduced = False
    for index, strategy in enumerate(strategies):
        rng = np.random.default_rng([int(config.seed), index, 7])
        rep = StrategyReport(strategy.value)
        reports[strategy.value] = rep
        try:
            t0 = time.perf_counter()
            init, info = initialize_with_info(
                problem, strategy, truth, rng, extent, solver_settings
            )
            rep.times = dict(info.times)
            rep.times["initialize"] = time.perf_counter() - t0
            rep.degenerate = info.degenerate
            rep.fallback = info.fallback
            if info.score_objective is not None:
                score_objective = info.score_objective
                solver_status = info.solver_status
                reduced = info.reduced_accuracy
                determinants = {str(k): v for k, v in info.projection.determinants.items()}
            rep.initial_ape = compute_ape(init, truth.solution)
            rep.initial_cost = evaluate_map_cost(problem, init)
            t1 = time.perf_counter()
            final, ref = refine(problem, init, refinement_settings)
            rep.times["refine"] = time.perf_counter() - t1
            rep.refinement = ref
            rep.final_cost = ref.final_cost
            rep.final_ape = compute_ape(final, truth.solution)
        except Exception as exc:  # a failing strategy must not abort the trial
            logger.exception("trial %d strategy %s failed", trial_id, strategy.value)
            rep.error = f"{type(exc).__name__}: {exc}"
    lower_ok = True
    if score_objective is not None:
        bounds = [gt_cost] + [r.final_cost for r in reports.values() if r.final_cost is not None]
        lower_ok = all(score_objective <= b + LOWER_BOUND_TOLERANCE for b in bounds)
        if not lower_ok:
            logger.error("trial %d: relaxation objective exceeds a feasible cost", trial_id)
    return TrialReport(
        trial_id=trial_id,
        seed=int(config.seed),
        config=config.to_dict(),
        ground_truth_cost=gt_cost,
        score_objective=score_objective,
        strategies=reports,
        lower_bound_ok=lower_ok,
        determinants=determinants,
        solver_status=solver_status,
        reduced_accuracy=reduced,
    )


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds derived from one master seed."""
    children = np.random.SeedSequence(int(master_seed)).spawn(trials)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def _run_one(args):
    config, strategies, trial_id = args
    return run_trial(config, strategies, trial_id)


def run_batch(
    config: SimulationConfig,
    trials: int,
    strategies=DEFAULT_STRATEGIES,
    workers: int = 1,
) -> list[TrialReport]:
    """Run ``trials`` independent trials whose seeds derive from ``config.seed``."""
    jobs = []
    for i, seed in enumerate(trial_seeds(config.seed, trials)):
        cfg = SimulationConfig.from_dict({**config.to_dict(), "seed": seed})
        jobs.append((cfg, tuple(strategies), i))
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
