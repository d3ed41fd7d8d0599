from dataclasses import replace

import numpy as np
import pytest

from conftest import square_problem
from instances import cyclic_instance, tree_instance
from oracles import chordal_oracle, cvxpy_relaxation
from scoreslam.conic import SolverStatus
from scoreslam.pipeline import compute_ape
from scoreslam.problem import ProblemError, RaSlamProblem, evaluate_map_cost
from scoreslam.projection import project_solution
from scoreslam.relaxation import (
    RelaxationError,
    build_score,
    evaluate_relaxed_cost,
    extract_relaxed_solution,
    flatten_relaxed_solution,
    range_slacks,
    solve_score,
)
from scoreslam.simulation import PRESETS, SimulationConfig, generate


def _small(seed, dim=2, robots=2, beacons=1, poses=15):
    cfg = SimulationConfig(
        dim=dim, num_robots=robots, num_beacons=beacons, poses_per_robot=poses,
        noise=PRESETS["high"], seed=seed,
    )
    return generate(cfg)


@pytest.mark.parametrize("dim,seed", [(2, 0), (2, 1), (2, 2), (3, 3), (3, 4)])
def test_objective_matches_independent_formulation(dim, seed):
    problem, _ = _small(seed, dim=dim)
    res = solve_score(problem)
    ref = cvxpy_relaxation(problem)
    assert res.relaxed.objective == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))


@pytest.mark.parametrize("seed", range(4))
def test_objective_is_lower_bound_on_ground_truth(seed):
    problem, gt = _small(seed, robots=1 + seed % 3)
    res = solve_score(problem)
    assert res.relaxed.objective <= evaluate_map_cost(problem, gt.solution) + 1e-6


def test_feasibility_anchor_and_cost_consistency():
    problem, _ = _small(7, robots=3, beacons=2, poses=25)
    res = solve_score(problem)
    rel = res.relaxed
    assert range_slacks(problem, rel).min() >= -1e-10
    np.testing.assert_allclose(rel.rotation_blocks[problem.anchor], np.eye(2), atol=1e-10)
    np.testing.assert_allclose(rel.translations[problem.anchor], 0.0, atol=1e-10)
    assert evaluate_relaxed_cost(problem, rel) == pytest.approx(rel.objective, rel=1e-9, abs=1e-12)
    assert rel.diagnostics["polish"]["objective_after"] <= rel.diagnostics["polish"]["objective_before"]
    # the optimal auxiliary distance is max(||t_i - t_j||, measured)
    for e, m in enumerate(problem.range_edges):
        gap = np.linalg.norm(rel.position(m.from_key) - rel.position(m.to_key))
        assert rel.aux_distances[e] == pytest.approx(max(gap, m.distance), abs=1e-12)


def test_flatten_roundtrip():
    problem, _ = _small(8)
    res = solve_score(problem, polish=False)
    x = flatten_relaxed_solution(res.relaxed, res.layout)
    np.testing.assert_array_equal(x, res.solver.primal)
    polished = solve_score(problem).relaxed
    x = flatten_relaxed_solution(polished, res.layout)
    program, _ = build_score(problem)
    assert program.objective @ x == pytest.approx(polished.objective, rel=1e-10, abs=1e-12)


def test_polish_never_increases_objective():
    problem, _ = _small(9, robots=3, poses=30)
    raw = solve_score(problem, polish=False).relaxed
    polished = solve_score(problem).relaxed
    assert polished.objective <= evaluate_relaxed_cost(problem, raw) + 1e-12


@pytest.mark.parametrize("builder", [tree_instance, cyclic_instance])
@pytest.mark.parametrize("seed", range(3))
def test_range_free_blocks_match_chordal(builder, seed):
    problem = builder(seed)
    blocks = solve_score(problem).relaxed.rotation_blocks
    expected = chordal_oracle(problem)
    for k in problem.pose_keys():
        assert np.linalg.norm(blocks[k] - expected[k]) <= 1e-6


def test_zero_noise_recovers_truth():
    problem, truth = square_problem(noise=0.0)
    res = solve_score(problem)
    assert res.relaxed.objective <= 1e-12
    sol, report = project_solution(res.relaxed, problem)
    assert not report.degenerate
    assert compute_ape(sol, truth).rmse <= 1e-5
    for k in problem.pose_keys():
        np.testing.assert_allclose(sol.rotations[k], truth.rotations[k], atol=1e-6)


def test_unbuildable_problem_raises():
    p = RaSlamProblem(2)
    p.add_pose_variable(0, 0)
    p.add_pose_variable(0, 1)
    with pytest.raises(ProblemError):
        build_score(p)


def test_extraction_rejects_bad_results():
    problem, _ = square_problem(noise=0.1)
    program, layout = build_score(problem)
    res = solve_score(problem, polish=False).solver
    bad = replace(res, status=SolverStatus.MAX_ITERATIONS)
    with pytest.raises(RelaxationError, match="status"):
        extract_relaxed_solution(bad, layout, problem)
    x = res.primal.copy()
    e0 = layout.aux_offsets[0]
    x[e0] -= 1.0  # d below ||t_i - t_j||
    with pytest.raises(RelaxationError, match="cone"):
        extract_relaxed_solution(replace(res, primal=x), layout, problem)
    x = res.primal.copy()
    x[layout.rotation_slice(problem.anchor)] += 0.1
    with pytest.raises(RelaxationError, match="anchor"):
        extract_relaxed_solution(replace(res, primal=x), layout, problem)
    with pytest.raises(RelaxationError, match="layout"):
        extract_relaxed_solution(replace(res, primal=x[:-1]), layout, problem)


def test_relaxed_cost_missing_variable():
    problem, _ = square_problem(noise=0.1)
    rel = solve_score(problem).relaxed
    del rel.aux_distances[0]
    with pytest.raises(ProblemError, match="missing"):
        evaluate_relaxed_cost(problem, rel)
