import numpy as np
import pytest

from conftest import square_problem
from oracles import finite_difference_jacobian, residual_oracle
from scoreslam.pipeline import initialize
from scoreslam.problem import evaluate_map_cost
from scoreslam.refinement import (
    RefinementReport,
    RefinementSettings,
    Termination,
    jacobian,
    refine,
    residuals,
)
from scoreslam.simulation import PRESETS, SimulationConfig, generate


def _instance(seed, dim=2, add_noise=True, poses=12):
    cfg = SimulationConfig(dim=dim, num_robots=1 + seed % 3, num_beacons=seed % 3,
                           poses_per_robot=poses, noise=PRESETS["high"], seed=seed,
                           add_noise=add_noise)
    return generate(cfg)



def _jitter(sol, rng, scale):
    from scoreslam.geometry import exp_so

    out = sol.copy()
    d = next(iter(out.rotations.values())).shape[0]
    for k in out.rotations:
        out.rotations[k] = out.rotations[k] @ exp_so(scale * rng.standard_normal(1 if d == 2 else 3), d)
        out.translations[k] = out.translations[k] + scale * rng.standard_normal(d)
    for k in out.landmark_positions:
        out.landmark_positions[k] = out.landmark_positions[k] + scale * rng.standard_normal(d)
    return out


def test_residuals_match_oracle(backend):
    problem, gt = _instance(4)
    sol = _jitter(gt.solution, np.random.default_rng(0), 0.2)
    np.testing.assert_allclose(residuals(problem, sol, backend=backend), residual_oracle(problem, sol),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("seed", range(3))
def test_jacobian_matches_finite_differences(backend, dim, seed):
    problem, gt = _instance(seed, dim=dim, poses=8)
    sol = _jitter(gt.solution, np.random.default_rng(seed), 0.2)
    J = jacobian(problem, sol, backend=backend).toarray()
    fd = finite_difference_jacobian(problem, sol)
    anchor_cols = np.flatnonzero(np.all(J == 0.0, axis=0))
    fd[:, anchor_cols] = 0.0  # gauge columns are held fixed
    assert np.all(np.abs(J - fd) <= np.maximum(1e-5, 1e-4 * np.abs(fd)))


def test_backends_agree():
    from scoreslam import kernels

    if not kernels.compiled_available():
        pytest.skip("compiled kernels not built")
    problem, gt = _instance(5, poses=40)
    sol = _jitter(gt.solution, np.random.default_rng(1), 0.2)
    a = jacobian(problem, sol, backend="python")
    b = jacobian(problem, sol, backend="compiled")
    assert abs(a - b).max() <= 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_cost_trace_is_monotone(backend, seed):
    problem, gt = _instance(seed, poses=30)
    init = _jitter(gt.solution, np.random.default_rng(seed), 0.3)
    sol, report = refine(problem, init, backend=backend)
    trace = report.cost_trace
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert report.initial_cost == pytest.approx(evaluate_map_cost(problem, init))
    assert report.final_cost == pytest.approx(evaluate_map_cost(problem, sol), rel=1e-9)
    assert report.final_cost <= report.initial_cost
    np.testing.assert_array_equal(sol.rotations[problem.anchor], init.rotations[problem.anchor])


def test_zero_noise_from_truth_converges_immediately(backend):
    problem, gt = _instance(1, add_noise=False, poses=30)
    sol, report = refine(problem, gt.solution, backend=backend)
    assert report.final_cost <= 1e-16 and report.iterations <= 2


def test_zero_noise_square_from_perturbed_start():
    problem, truth = square_problem(noise=0.0)
    init = _jitter(truth, np.random.default_rng(3), 0.05)
    _, report = refine(problem, init, RefinementSettings(gradient_norm_tolerance=1e-12,
                                                         relative_cost_tolerance=1e-14))
    assert report.final_cost <= 1e-12


def test_settings_validation():
    with pytest.raises(ValueError):
        RefinementSettings(max_iterations=0)
    with pytest.raises(ValueError):
        RefinementSettings(damping_increase=0.5)
    with pytest.raises(ValueError):
        RefinementSettings(range_epsilon=-1.0)


def test_report_roundtrip_and_iteration_limit():
    problem, gt = _instance(2, poses=30)
    init = _jitter(gt.solution, np.random.default_rng(2), 0.3)
    _, report = refine(problem, init, RefinementSettings(max_iterations=1))
    assert report.termination_reason == Termination.MAX_ITERATIONS and report.iterations == 1
    assert RefinementReport.from_dict(report.to_dict()) == report
