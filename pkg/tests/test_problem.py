import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import square_problem
from oracles import hat_oracle, random_rotation_oracle, residual_oracle
from scoreslam.geometry import exp_so, hat, is_rotation, log_so, random_rotation, rot2
from scoreslam.problem import (
    ProblemError,
    RangeMeasurement,
    RaSlamProblem,
    RelativePoseMeasurement,
    Solution,
    evaluate_map_cost,
    landmark_key,
    pose_key,
)


# geometry -------------------------------------------------------------------------


@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_exp_matches_matrix_exponential_3d(w):
    w = np.array(w)
    np.testing.assert_allclose(exp_so(w, 3), expm(hat_oracle(w, 3)), atol=1e-12)
    np.testing.assert_allclose(hat(w, 3), hat_oracle(w, 3))


@given(st.floats(-3.1, 3.1))
def test_exp_log_roundtrip_2d(theta):
    R = exp_so(np.array([theta]), 2)
    np.testing.assert_allclose(R, rot2(theta), atol=1e-14)
    np.testing.assert_allclose(log_so(R), [theta], atol=1e-12)


@given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_exp_log_roundtrip_3d(w):
    w = np.array(w) * 3.0 / max(np.linalg.norm(w), 1.0)
    np.testing.assert_allclose(log_so(exp_so(w, 3)), w, atol=1e-9)


def test_log_near_pi():
    axis = np.array([1.0, 2.0, 2.0]) / 3.0
    w = (np.pi - 1e-9) * axis
    np.testing.assert_allclose(log_so(exp_so(w, 3)), w, atol=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_random_rotation_is_rotation(d):
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert is_rotation(random_rotation(d, rng))


def test_is_rotation_rejects_reflection_and_nan():
    assert not is_rotation(np.diag([1.0, -1.0]))
    assert not is_rotation(np.full((2, 2), np.nan))
    assert not is_rotation(np.eye(3)[:2])


# keys and construction -------------------------------------------------------------


def test_keys_and_ordering():
    assert pose_key(0, 1) < pose_key(1, 0)
    assert str(pose_key(2, 5)) == "P2:5" and str(landmark_key(3)) == "L3"
    with pytest.raises(ProblemError):
        pose_key(-1, 0)
    with pytest.raises(ProblemError):
        landmark_key(-2)


def test_construction_errors():
    p = RaSlamProblem(2)
    a = p.add_pose_variable(0, 0)
    with pytest.raises(ProblemError, match="duplicate"):
        p.add_pose_variable(0, 0)
    with pytest.raises(ProblemError, match="non-contiguous"):
        p.add_pose_variable(0, 2)
    with pytest.raises(ProblemError, match="non-contiguous"):
        p.add_pose_variable(3, 1)
    assert 3 not in p.pose_variables
    b = p.add_pose_variable(0, 1)
    lm = p.add_landmark_variable(0)
    with pytest.raises(ProblemError, match="duplicate"):
        p.add_landmark_variable(0)
    good = dict(rotation=np.eye(2), translation=np.zeros(2), kappa=1.0, tau=1.0)
    with pytest.raises(ProblemError, match="unknown"):
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, pose_key(0, 9), **good))
    with pytest.raises(ProblemError, match="not a pose"):
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, lm, **good))
    with pytest.raises(ProblemError, match="distinct"):
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, a, **good))
    with pytest.raises(ProblemError, match="SO"):
        p.add_relative_pose_measurement(
            RelativePoseMeasurement(a, b, np.diag([1.0, -1.0]), np.zeros(2), 1.0, 1.0)
        )
    with pytest.raises(ProblemError, match="kappa"):
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, b, np.eye(2), np.zeros(2), 0.0, 1.0))
    with pytest.raises(ProblemError, match="tau"):
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, b, np.eye(2), np.zeros(2), 1.0, -1.0))
    with pytest.raises(ProblemError, match="sigma"):
        p.add_range_measurement(RangeMeasurement(a, lm, 1.0, 0.0))
    with pytest.raises(ProblemError, match="finite"):
        p.add_range_measurement(RangeMeasurement(a, lm, np.inf, 1.0))
    with pytest.raises(ProblemError, match="distinct"):
        p.add_range_measurement(RangeMeasurement(lm, lm, 1.0, 1.0))
    # negative noisy distances are legal
    p.add_range_measurement(RangeMeasurement(a, lm, -0.1, 1.0))


def test_validate_reports_disconnection_and_missing_anchor():
    p = RaSlamProblem(2)
    assert "missing anchor" in " ".join(p.validate())
    a = p.add_pose_variable(0, 0)
    p.add_pose_variable(0, 1)
    p.add_landmark_variable(0)
    diags = p.validate()
    assert any("disconnected" in d for d in diags)
    p.add_relative_pose_measurement(
        RelativePoseMeasurement(a, pose_key(0, 1), np.eye(2), np.ones(2), 1.0, 1.0)
    )
    p.add_range_measurement(RangeMeasurement(a, landmark_key(0), 1.0, 1.0))
    assert p.validate() == []


def test_invalid_dimension():
    with pytest.raises(ProblemError):
        RaSlamProblem(4)


# cost -------------------------------------------------------------------------------


def test_cost_zero_at_truth_without_noise():
    p, truth = square_problem(noise=0.0)
    assert evaluate_map_cost(p, truth) <= 1e-20


def test_cost_closed_form_single_edges():
    p = RaSlamProblem(2)
    a, b = p.add_pose_variable(0, 0), p.add_pose_variable(0, 1)
    lm = p.add_landmark_variable(0)
    p.add_relative_pose_measurement(RelativePoseMeasurement(a, b, rot2(0.3), np.array([1.0, 0.0]), 2.0, 3.0))
    p.add_range_measurement(RangeMeasurement(b, lm, 2.5, 0.5))
    s = Solution(
        rotations={a: np.eye(2), b: np.eye(2)},
        translations={a: np.zeros(2), b: np.zeros(2)},
        landmark_positions={lm: np.array([3.0, 4.0])},
    )
    # rotation: kappa ||I - R(0.3)||_F^2 = kappa * 4 (1 - cos 0.3)
    expected = 2.0 * 4 * (1 - np.cos(0.3)) + 3.0 * 1.0 + (5.0 - 2.5) ** 2 / 0.25
    assert evaluate_map_cost(p, s) == pytest.approx(expected, rel=1e-14)


def test_cost_equals_residual_oracle():
    p, truth = square_problem(noise=0.1, seed=3)
    r = residual_oracle(p, truth)
    assert evaluate_map_cost(p, truth) == pytest.approx(r @ r, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_cost_invariant_to_global_rigid_transform(seed):
    rng = np.random.default_rng(seed)
    p, truth = square_problem(noise=0.2, seed=seed)
    G = random_rotation_oracle(2, rng)
    g = rng.standard_normal(2)
    moved = truth.copy()
    for k in moved.rotations:
        moved.rotations[k] = G @ truth.rotations[k]
        moved.translations[k] = G @ truth.translations[k] + g
    for k in moved.landmark_positions:
        moved.landmark_positions[k] = G @ truth.landmark_positions[k] + g
    assert evaluate_map_cost(p, moved) == pytest.approx(evaluate_map_cost(p, truth), rel=1e-10)


def test_cost_rejects_invalid_solution():
    p, truth = square_problem()
    bad = truth.copy()
    bad.rotations[pose_key(0, 1)] = 2 * np.eye(2)
    with pytest.raises(ProblemError, match="SO"):
        evaluate_map_cost(p, bad)
    del bad.translations[pose_key(0, 2)]
    with pytest.raises(ProblemError):
        evaluate_map_cost(p, bad)


def test_problem_equality():
    p, _ = square_problem(noise=0.1, seed=1)
    q, _ = square_problem(noise=0.1, seed=1)
    r, _ = square_problem(noise=0.1, seed=2)
    assert p == q and p != r
