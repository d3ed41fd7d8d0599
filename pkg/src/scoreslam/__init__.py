"""Second-order cone relaxation initialization for range-aided SLAM.

Typical use::

    from scoreslam import SimulationConfig, generate, initialize, refine

    problem, truth = generate(SimulationConfig(num_robots=2, seed=1))
    initial = initialize(problem, "score", truth)
    estimate, report = refine(problem, initial)
"""

from .io import ParseError, read_problem, read_solution, write_problem, write_solution
from .pipeline import (
    Alignment,
    ApeResult,
    InitializationError,
    InitializationStrategy,
    StrategyReport,
    TrialReport,
    compute_ape,
    initialize,
    initialize_with_info,
    run_batch,
    run_trial,
)
from .problem import (
    ProblemError,
    RangeMeasurement,
    RaSlamProblem,
    RelativePoseMeasurement,
    Solution,
    VariableKey,
    evaluate_map_cost,
    landmark_key,
    pose_key,
)
from .projection import (
    DEGENERACY_THRESHOLD,
    ProjectionError,
    ProjectionReport,
    detect_degeneracy,
    project_rotation,
    project_solution,
)
from .refinement import RefinementReport, RefinementSettings, Termination, jacobian, refine, residuals
from .relaxation import (
    RelaxationError,
    RelaxedSolution,
    ScoreResult,
    build_score,
    evaluate_relaxed_cost,
    extract_relaxed_solution,
    solve_score,
)
from .simulation import GroundTruth, NoiseModel, PRESETS, SimulationConfig, generate, preset

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "ApeResult",
    "DEGENERACY_THRESHOLD",
    "GroundTruth",
    "InitializationError",
    "InitializationStrategy",
    "NoiseModel",
    "PRESETS",
    "ParseError",
    "ProblemError",
    "ProjectionError",
    "ProjectionReport",
    "RaSlamProblem",
    "RangeMeasurement",
    "RefinementReport",
    "RefinementSettings",
    "RelativePoseMeasurement",
    "RelaxationError",
    "RelaxedSolution",
    "ScoreResult",
    "SimulationConfig",
    "Solution",
    "StrategyReport",
    "Termination",
    "TrialReport",
    "VariableKey",
    "build_score",
    "compute_ape",
    "detect_degeneracy",
    "evaluate_map_cost",
    "evaluate_relaxed_cost",
    "extract_relaxed_solution",
    "generate",
    "initialize",
    "initialize_with_info",
    "jacobian",
    "landmark_key",
    "pose_key",
    "preset",
    "project_rotation",
    "project_solution",
    "read_problem",
    "read_solution",
    "refine",
    "residuals",
    "run_batch",
    "run_trial",
    "solve_score",
    "write_problem",
    "write_solution",
]
