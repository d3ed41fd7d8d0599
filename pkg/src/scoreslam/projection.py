"""Projection of relaxed rotation blocks onto SO(d) and collapse detection.

The nearest rotation to a matrix ``M`` in Frobenius norm is
``U diag(1, ..., 1, det(U V')) V'`` with ``M = U S V'`` (singular values in
descending order). Relaxed solutions whose rotation blocks shrink toward zero
are flagged through their determinants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .problem import RaSlamProblem, Solution, VariableKey
from .relaxation import RelaxedSolution

logger = logging.getLogger(__name__)

DEGENERACY_THRESHOLD = 5e-2
_UNIQUENESS_TOL = 1e-12


class ProjectionError(ValueError):
    """Raised when a matrix has no meaningful nearest rotation."""


def project_rotation_info(M: np.ndarray) -> tuple[np.ndarray, bool]:
    """Nearest rotation to ``M`` and whether it is the unique minimizer.

    The minimizer is unique unless ``s[d-2] + det(U V') * s[d-1]`` vanishes,
    i.e. the two smallest singular values coincide while a reflection must be
    undone, or the matrix has rank d - 2 or less. In the non-unique case one
    minimizer is still returned.

    Raises:
        ProjectionError: if ``M`` is not finite or is the zero matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ProjectionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ProjectionError("matrix has non-finite entries")
    U, S, Vt = np.linalg.svd(M)
    if S[0] == 0.0:
        raise ProjectionError("the zero matrix has no well-defined nearest rotation")
    sign = 1.0 if np.linalg.det(U @ Vt) > 0 else -1.0
    D = np.ones(M.shape[0])
    D[-1] = sign
    R = (U * D) @ Vt
    unique = S[-2] + sign * S[-1] > _UNIQUENESS_TOL * S[0]
    return R, bool(unique)


def project_rotation(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix to ``M`` in Frobenius norm."""
    return project_rotation_info(M)[0]


@dataclass
class ProjectionReport:
    """Per-pose determinants and projection distances of the relaxed rotation blocks."""

    determinants: dict[VariableKey, float] = field(default_factory=dict)
    distances: dict[VariableKey, float] = field(default_factory=dict)
    degenerate: bool = False
    threshold_used: float = DEGENERACY_THRESHOLD
    non_unique: list[VariableKey] = field(default_factory=list)

    @property
    def min_determinant(self) -> float:
        return min(self.determinants.values()) if self.determinants else float("inf")

    def to_dict(self) -> dict:
        return {
            "determinants": {str(k): v for k, v in self.determinants.items()},
            "distances": {str(k): v for k, v in self.distances.items()},
            "degenerate": self.degenerate,
            "threshold_used": self.threshold_used,
            "min_determinant": self.min_determinant,
            "non_unique": [str(k) for k in self.non_unique],
        }


def rotation_determinants(relaxed: RelaxedSolution) -> dict[VariableKey, float]:
    return {k: float(np.linalg.det(M)) for k, M in relaxed.rotation_blocks.items()}


def detect_degeneracy(relaxed: RelaxedSolution, threshold: float = DEGENERACY_THRESHOLD) -> bool:
    """True iff some relaxed rotation block has determinant below ``threshold``."""
    dets = rotation_determinants(relaxed)
    return bool(dets) and min(dets.values()) < threshold


def project_solution(
    relaxed: RelaxedSolution,
    problem: RaSlamProblem,
    threshold: float = DEGENERACY_THRESHOLD,
) -> tuple[Solution, ProjectionReport]:
    """Project every rotation block to SO(d); copy translations and landmarks.

    Raises:
        ProjectionError: if a rotation block is missing or cannot be projected.
    """
    report = ProjectionReport(threshold_used=threshold)
    solution = Solution()
    for key in problem.pose_keys():
        if key not in relaxed.rotation_blocks or key not in relaxed.translations:
            raise ProjectionError(f"relaxed solution has no estimate for {key}")
        M = relaxed.rotation_blocks[key]
        try:
            R, unique = project_rotation_info(M)
        except ProjectionError as exc:
            raise ProjectionError(f"{key}: {exc}") from None
        if not unique:
            report.non_unique.append(key)
        solution.rotations[key] = R
        solution.translations[key] = np.array(relaxed.translations[key], dtype=float)
        report.determinants[key] = float(np.linalg.det(M))
        report.distances[key] = float(np.linalg.norm(R - M))
    for key in problem.landmark_variables:
        if key not in relaxed.landmark_positions:
            raise ProjectionError(f"relaxed solution has no estimate for {key}")
        solution.landmark_positions[key] = np.array(relaxed.landmark_positions[key], dtype=float)
    report.degenerate = report.min_determinant < threshold
    if report.non_unique:
        logger.warning("nearest rotation is not unique for %d poses", len(report.non_unique))
    return solution, report
