"""Small rotation-group helpers shared by the solvers and the simulator."""

from __future__ import annotations

import numpy as np

_SO2_GENERATOR = np.array([[0.0, -1.0], [1.0, 0.0]])


def tangent_dim(dim: int) -> int:
    """Number of Lie-algebra coordinates of SO(dim)."""
    return 1 if dim == 2 else 3


def hat(omega: np.ndarray, dim: int) -> np.ndarray:
    """Map tangent coordinates to a skew-symmetric matrix."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if dim == 2:
        return omega[0] * _SO2_GENERATOR
    x, y, z = omega
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def generators(dim: int) -> list[np.ndarray]:
    """Basis of so(dim) used for right perturbations R @ Exp(delta)."""
    return [hat(e, dim) for e in np.eye(tangent_dim(dim))]


def exp_so(omega: np.ndarray, dim: int) -> np.ndarray:
    """Exponential map so(dim) -> SO(dim)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if dim == 2:
        c, s = np.cos(omega[0]), np.sin(omega[0])
        return np.array([[c, -s], [s, c]])
    theta = float(np.linalg.norm(omega))
    K = hat(omega, 3)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * K @ K
    )


def log_so(R: np.ndarray) -> np.ndarray:
    """Logarithm map SO(d) -> tangent coordinates (principal branch)."""
    R = np.asarray(R, dtype=float)
    if R.shape == (2, 2):
        return np.array([np.arctan2(R[1, 0], R[0, 0])])
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / max(axis[k], 1e-300)
        axis /= np.linalg.norm(axis)
        if axis @ v < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * v


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform sample from SO(dim)."""
    if dim == 2:
        return rot2(rng.uniform(0.0, 2.0 * np.pi))
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    """True if R is orthogonal with determinant +1 up to ``tol``."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or not np.all(np.isfinite(R)):
        return False
    d = R.shape[0]
    return (
        np.linalg.norm(R.T @ R - np.eye(d)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )
