"""Shared fixtures and the acceptance-criterion summary printed after the run."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from scoreslam import kernels
from scoreslam.geometry import rot2
from scoreslam.problem import (
    RangeMeasurement,
    RaSlamProblem,
    RelativePoseMeasurement,
    Solution,
)

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}
RESULTS_FILE = Path(__file__).resolve().parent.parent / "acceptance_results.json"


def record_acceptance(criterion: int, passed: bool, detail: str) -> None:
    """Remember one criterion's outcome for the end-of-run summary."""
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
    RESULTS_FILE.write_text(
        json.dumps(
            {str(k): {"pass": ok, "detail": d} for k, (ok, d) in sorted(ACCEPTANCE_RESULTS.items())},
            indent=1,
        )
        + "\n"
    )


BACKENDS = ["python"] + (["compiled"] if kernels.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def square_problem(noise: float = 0.0, seed: int = 0, with_range: bool = True):
    """One robot walking the unit square (a loop closure) plus one beacon.

    Returns the problem and its ground-truth solution.
    """
    rng = np.random.default_rng(seed)
    p = RaSlamProblem(2)
    truth = Solution()
    heading = 0.0
    pos = np.zeros(2)
    keys = []
    for t in range(4):
        k = p.add_pose_variable(0, t)
        keys.append(k)
        truth.rotations[k] = rot2(heading)
        truth.translations[k] = pos.copy()
        pos = pos + rot2(heading) @ np.array([1.0, 0.0])
        heading += np.pi / 2
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    for i, j in edges:
        a, b = keys[i], keys[j]
        Ri, Rj = truth.rotations[a], truth.rotations[b]
        R = Ri.T @ Rj @ rot2(noise * rng.standard_normal())
        t = Ri.T @ (truth.translations[b] - truth.translations[a]) + noise * rng.standard_normal(2)
        p.add_relative_pose_measurement(RelativePoseMeasurement(a, b, R, t, 100.0, 50.0))
    if with_range:
        lm = p.add_landmark_variable(0)
        truth.landmark_positions[lm] = np.array([0.5, 2.0])
        for k in keys[1:]:
            d = np.linalg.norm(truth.translations[k] - truth.landmark_positions[lm])
            p.add_range_measurement(RangeMeasurement(k, lm, d + noise * rng.standard_normal(), 0.1))
    return p, truth
