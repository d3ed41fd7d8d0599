"""Range-aided SLAM problem graph and its maximum-likelihood cost."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import is_rotation

logger = logging.getLogger(__name__)

POSE = "pose"
LANDMARK = "landmark"


class ProblemError(ValueError):
    """Raised when a problem is built or evaluated with inconsistent data."""


@dataclass(frozen=True, order=True)
class VariableKey:
    """Identifier of a pose (robot, time) or a landmark (index)."""

    kind: str
    robot: int = 0
    time: int = 0
    landmark: int = 0

    @property
    def is_pose(self) -> bool:
        return self.kind == POSE

    def __str__(self) -> str:
        if self.is_pose:
            return f"P{self.robot}:{self.time}"
        return f"L{self.landmark}"


def pose_key(robot: int, time: int) -> VariableKey:
    if robot < 0 or time < 0:
        raise ProblemError(f"pose indices must be nonnegative, got ({robot}, {time})")
    return VariableKey(POSE, robot=int(robot), time=int(time))


def landmark_key(index: int) -> VariableKey:
    if index < 0:
        raise ProblemError(f"landmark index must be nonnegative, got {index}")
    return VariableKey(LANDMARK, landmark=int(index))


@dataclass
class RelativePoseMeasurement:
    """Noisy relative rigid transform from pose ``from_key`` to pose ``to_key``.

    ``kappa`` weights the chordal rotation residual and ``tau`` the
    translation residual (precision in 1/m^2).
    """

    from_key: VariableKey
    to_key: VariableKey
    rotation: np.ndarray
    translation: np.ndarray
    kappa: float
    tau: float

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float).reshape(-1)
        self.kappa = float(self.kappa)
        self.tau = float(self.tau)


@dataclass
class RangeMeasurement:
    """Noisy distance between two nodes; ``distance`` may be negative."""

    from_key: VariableKey
    to_key: VariableKey
    distance: float
    sigma: float

    def __post_init__(self) -> None:
        self.distance = float(self.distance)
        self.sigma = float(self.sigma)


@dataclass(eq=False)
class Solution:
    rotations: dict[VariableKey, np.ndarray] = field(default_factory=dict)
    translations: dict[VariableKey, np.ndarray] = field(default_factory=dict)
    landmark_positions: dict[VariableKey, np.ndarray] = field(default_factory=dict)

    def position(self, key: VariableKey) -> np.ndarray:
        if key.is_pose:
            return self.translations[key]
        return self.landmark_positions[key]

    def copy(self) -> "Solution":
        return Solution(
            {k: v.copy() for k, v in self.rotations.items()},
            {k: v.copy() for k, v in self.translations.items()},
            {k: v.copy() for k, v in self.landmark_positions.items()},
        )

    def __eq__(self, other: object) -> bool:
        """Exact equality of keys and values."""
        if not isinstance(other, Solution):
            return NotImplemented
        for mine, theirs in (
            (self.rotations, other.rotations),
            (self.translations, other.translations),
            (self.landmark_positions, other.landmark_positions),
        ):
            if mine.keys() != theirs.keys():
                return False
            if not all(np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


class RaSlamProblem:
    """Directed measurement graph over pose and landmark variables.

    Poses of each robot are registered in time order starting at 0; the first
    pose of robot 0 is the anchor whose rotation (and translation) fix the
    gauge of the relaxation and of local refinement.
    """

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ProblemError(f"dimension must be 2 or 3, got {dim}")
        self.dim = int(dim)
        self.pose_variables: dict[int, list[VariableKey]] = {}
        self.landmark_variables: list[VariableKey] = []
        self.relative_pose_edges: list[RelativePoseMeasurement] = []
        self.range_edges: list[RangeMeasurement] = []
        self._known: set[VariableKey] = set()

    # construction ------------------------------------------------------

    def add_pose_variable(self, robot_index: int, time_index: int) -> VariableKey:
        key = pose_key(robot_index, time_index)
        if key in self._known:
            raise ProblemError(f"duplicate pose variable {key}")
        chain = self.pose_variables.setdefault(key.robot, [])
        if time_index != len(chain):
            if not chain:
                del self.pose_variables[key.robot]
            raise ProblemError(
                f"non-contiguous time index {time_index} for robot {robot_index}; "
                f"expected {len(chain)}"
            )
        chain.append(key)
        self._known.add(key)
        return key

    def add_landmark_variable(self, index: int) -> VariableKey:
        key = landmark_key(index)
        if key in self._known:
            raise ProblemError(f"duplicate landmark variable {key}")
        self.landmark_variables.append(key)
        self._known.add(key)
        return key

    def add_relative_pose_measurement(self, m: RelativePoseMeasurement) -> None:
        for k in (m.from_key, m.to_key):
            if k not in self._known:
                raise ProblemError(f"relative pose edge references unknown variable {k}")
            if not k.is_pose:
                raise ProblemError(f"relative pose edge endpoint {k} is not a pose")
        if m.from_key == m.to_key:
            raise ProblemError("relative pose edge must connect distinct poses")
        d = self.dim
        if m.rotation.shape != (d, d) or not is_rotation(m.rotation, 1e-9):
            raise ProblemError("measured rotation is not in SO(d)")
        if m.translation.shape != (d,) or not np.all(np.isfinite(m.translation)):
            raise ProblemError("measured translation has the wrong shape")
        if not (m.kappa > 0 and np.isfinite(m.kappa)):
            raise ProblemError(f"kappa must be positive, got {m.kappa}")
        if not (m.tau > 0 and np.isfinite(m.tau)):
            raise ProblemError(f"tau must be positive, got {m.tau}")
        self.relative_pose_edges.append(m)

    def add_range_measurement(self, m: RangeMeasurement) -> None:
        for k in (m.from_key, m.to_key):
            if k not in self._known:
                raise ProblemError(f"range edge references unknown variable {k}")
        if m.from_key == m.to_key:
            raise ProblemError("range edge must connect distinct nodes")
        if not (m.sigma > 0 and np.isfinite(m.sigma)):
            raise ProblemError(f"sigma must be positive, got {m.sigma}")
        if not np.isfinite(m.distance):
            raise ProblemError("range distance must be finite")
        self.range_edges.append(m)

    # queries -------------------------------------------------------------

    @property
    def anchor(self) -> VariableKey | None:
        chain = self.pose_variables.get(0)
        return chain[0] if chain else None

    @property
    def num_robots(self) -> int:
        return len(self.pose_variables)

    def pose_keys(self) -> list[VariableKey]:
        return [k for r in sorted(self.pose_variables) for k in self.pose_variables[r]]

    def variables(self) -> list[VariableKey]:
        return self.pose_keys() + list(self.landmark_variables)

    def __contains__(self, key: VariableKey) -> bool:
        return key in self._known

    def validate(self) -> list[str]:
        """Return one diagnostic string per violated problem invariant."""
        diagnostics: list[str] = []
        if self.anchor is None:
            diagnostics.append("missing anchor: robot 0 has no first pose")
        for r, chain in self.pose_variables.items():
            if [k.time for k in chain] != list(range(len(chain))):
                diagnostics.append(f"robot {r} poses are not a contiguous sequence")
        edges = [(m.from_key, m.to_key) for m in self.relative_pose_edges]
        edges += [(m.from_key, m.to_key) for m in self.range_edges]
        for a, b in edges:
            for k in (a, b):
                if k not in self._known:
                    diagnostics.append(f"dangling edge: {a} -> {b} references {k}")
        nodes = self.variables()
        if nodes:
            parent = {k: k for k in nodes}

            def find(k):
                while parent[k] != k:
                    parent[k] = parent[parent[k]]
                    k = parent[k]
                return k

            for a, b in edges:
                if a in parent and b in parent:
                    parent[find(a)] = find(b)
            roots = {find(k) for k in nodes}
            if len(roots) > 1:
                diagnostics.append(
                    f"disconnected: measurement graph has {len(roots)} components"
                )
        return diagnostics

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RaSlamProblem):
            return NotImplemented
        if (
            self.dim != other.dim
            or self.pose_variables != other.pose_variables
            or self.landmark_variables != other.landmark_variables
            or len(self.relative_pose_edges) != len(other.relative_pose_edges)
            or len(self.range_edges) != len(other.range_edges)
        ):
            return False
        for a, b in zip(self.relative_pose_edges, other.relative_pose_edges):
            if (
                a.from_key != b.from_key
                or a.to_key != b.to_key
                or not np.array_equal(a.rotation, b.rotation)
                or not np.array_equal(a.translation, b.translation)
                or a.kappa != b.kappa
                or a.tau != b.tau
            ):
                return False
        for a, b in zip(self.range_edges, other.range_edges):
            if (a.from_key, a.to_key, a.distance, a.sigma) != (
                b.from_key,
                b.to_key,
                b.distance,
                b.sigma,
            ):
                return False
        return True

    def __repr__(self) -> str:
        return (
            f"RaSlamProblem(dim={self.dim}, robots={self.num_robots}, "
            f"poses={len(self.pose_keys())}, landmarks={len(self.landmark_variables)}, "
            f"pose_edges={len(self.relative_pose_edges)}, "
            f"range_edges={len(self.range_edges)})"
        )


def check_solution(problem: RaSlamProblem, solution: Solution, tol: float = 1e-9) -> None:
    """Raise ``ProblemError`` unless ``solution`` covers the problem with SO(d) rotations."""
    poses = set(problem.pose_keys())
    landmarks = set(problem.landmark_variables)
    if set(solution.rotations) != poses or set(solution.translations) != poses:
        missing = poses.symmetric_difference(solution.rotations)
        missing |= poses.symmetric_difference(solution.translations)
        raise ProblemError(f"solution pose keys do not match problem: {sorted(missing)[:5]}")
    if set(solution.landmark_positions) != landmarks:
        raise ProblemError("solution landmark keys do not match problem")
    for k, R in solution.rotations.items():
        if not is_rotation(R, tol):
            raise ProblemError(f"rotation of {k} is not in SO({problem.dim})")


def evaluate_map_cost(problem: RaSlamProblem, solution: Solution) -> float:
    """Negative log-likelihood (up to constants) of ``solution``.

    Sum of kappa * ||R_j - R_i R~_ij||_F^2 + tau * ||t_j - t_i - R_i t~_ij||^2
    over relative pose edges plus (||t_i - t_j|| - d~_ij)^2 / sigma^2 over range
    edges.
    """
    check_solution(problem, solution)
    R, t = solution.rotations, solution.translations
    cost = 0.0
    for m in problem.relative_pose_edges:
        Ri, Rj = R[m.from_key], R[m.to_key]
        cost += m.kappa * float(np.sum((Rj - Ri @ m.rotation) ** 2))
        r = t[m.to_key] - t[m.from_key] - Ri @ m.translation
        cost += m.tau * float(r @ r)
    for m in problem.range_edges:
        diff = solution.position(m.from_key) - solution.position(m.to_key)
        cost += (float(np.linalg.norm(diff)) - m.distance) ** 2 / m.sigma**2
    return cost
