"""Synthetic multi-robot range-aided SLAM instances on a lattice.

Robots random-walk on an integer grid with unit moves; every move yields a
noisy odometry measurement and, with a fixed probability, a noisy range to a
uniformly chosen other robot (at the same time step) or static beacon.
Rotation noise follows the isotropic Langevin distribution with mode I,
translation and range noise are Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import rot2
from .problem import (
    RaSlamProblem,
    RangeMeasurement,
    RelativePoseMeasurement,
    Solution,
    VariableKey,
    landmark_key,
    pose_key,
)

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise: range std ``sigma`` (m), translation variance ``tau_inv``
    (m^2) and inverse rotation concentration ``kappa_inv``."""

    sigma: float
    tau_inv: float
    kappa_inv: float

    def __post_init__(self) -> None:
        for name in ("sigma", "tau_inv", "kappa_inv"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"noise parameter {name} must be positive, got {v}")

    @property
    def kappa(self) -> float:
        return 1.0 / self.kappa_inv

    @property
    def tau(self) -> float:
        return 1.0 / self.tau_inv

    @property
    def translation_std(self) -> float:
        return float(np.sqrt(self.tau_inv))

    @property
    def rotation_std(self) -> float:
        """Small-noise angle std; the 2-D angle is von Mises with concentration 2 kappa."""
        return float(np.sqrt(self.kappa_inv / 2.0))


PRESETS = {
    # std: 0.05 m range, 0.01 m translation, 0.002 rad rotation
    "low": NoiseModel(sigma=0.05, tau_inv=1e-4, kappa_inv=8e-6),
    # std: 0.25 m range, 0.05 m translation, ~0.007 rad rotation
    "high": NoiseModel(sigma=0.25, tau_inv=2.5e-3, kappa_inv=1e-4),
}


def preset(name: str) -> NoiseModel:
    """Named repository noise preset ("low" or "high")."""
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class SimulationConfig:
    """Parameters of one simulated trial.

    ``add_noise=False`` produces exact measurements (the noise model still
    provides the edge weights).
    """

    dim: int = 2
    num_robots: int = 1
    num_beacons: int = 1
    poses_per_robot: int = 100
    grid_extent: int = 10
    step_length: float = 1.0
    range_probability: float = 0.5
    noise: NoiseModel = field(default_factory=lambda: PRESETS["high"])
    seed: int = 0
    add_noise: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.noise, dict):
            self.noise = NoiseModel(**self.noise)
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.num_robots < 1:
            raise ValueError("num_robots must be at least 1")
        if self.num_beacons < 0:
            raise ValueError("num_beacons must be nonnegative")
        if self.poses_per_robot < 2:
            raise ValueError("poses_per_robot must be at least 2")
        if self.grid_extent < 1:
            raise ValueError("grid_extent must be at least 1")
        if not self.step_length > 0:
            raise ValueError("step_length must be positive")
        if not 0.0 <= self.range_probability <= 1.0:
            raise ValueError("range_probability must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        data = dict(data)
        noise = data.pop("noise", None)
        if isinstance(noise, str):
            noise = preset(noise)
        elif isinstance(noise, dict):
            noise = NoiseModel(**noise)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data, **({"noise": noise} if noise is not None else {}))


@dataclass
class GroundTruth:
    """True poses and beacon positions plus the true distance of every range edge."""

    solution: Solution
    range_distances: list[float] = field(default_factory=list)


# rotation noise ---------------------------------------------------------------


def _axis_angle(axis: np.ndarray, theta: float) -> np.ndarray:
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * K @ K


def sample_rotation_noise(kappa: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from the isotropic Langevin distribution with mode I and concentration ``kappa``.

    The density is proportional to ``exp(kappa * tr(R))`` w.r.t. the Haar
    measure. In 2-D the rotation angle is exactly von Mises with concentration
    ``2 kappa``. In 3-D the rotation angle has density proportional to
    ``(1 - cos t) exp(2 kappa cos t)`` on [0, pi]; it is sampled by rejection
    from an isotropic Gaussian rotation vector with per-axis variance
    ``pi^2 / (8 kappa)``, whose envelope is valid because
    ``1 - cos t >= 2 t^2 / pi^2`` on [0, pi].
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if dim == 2:
        return rot2(float(rng.vonmises(0.0, 2.0 * kappa)))
    std = np.pi / np.sqrt(8.0 * kappa)
    kprime = 4.0 * kappa / np.pi**2
    omega = np.zeros(3)
    for _ in range(MAX_REJECTIONS):
        omega = rng.standard_normal(3) * std
        theta = float(np.linalg.norm(omega))
        if theta == 0.0:
            return np.eye(3)
        if theta > np.pi:
            continue
        # 2 (1 - cos t) / t^2 written stably as (sin(t/2) / (t/2))^2
        sinc = np.sin(0.5 * theta) / (0.5 * theta)
        log_ratio = -4.0 * kappa * np.sin(0.5 * theta) ** 2 + kprime * theta**2
        if rng.uniform() < sinc**2 * np.exp(min(log_ratio, 0.0)):
            return _axis_angle(omega / theta, theta)
    logger.warning("rotation noise rejection sampler gave up; using the proposal sample")
    theta = float(np.linalg.norm(omega))
    return _axis_angle(omega / theta, min(theta, np.pi)) if theta > 0 else np.eye(3)


# lattice motion ----------------------------------------------------------------


def _turns(dim: int) -> list[np.ndarray]:
    """Body-frame rotations for forward, left, right (and up, down in 3-D)."""
    if dim == 2:
        return [np.eye(2), rot2(np.pi / 2), rot2(-np.pi / 2)]
    yaw_l = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    pitch_u = np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    return [np.eye(3), yaw_l, yaw_l.T, pitch_u, pitch_u.T]


def _initial_heading(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly chosen axis-aligned orientation."""
    if dim == 2:
        return np.round(rot2(rng.integers(4) * np.pi / 2))
    yaw = np.round(_axis_angle(np.array([0.0, 0.0, 1.0]), rng.integers(4) * np.pi / 2))
    level = [np.eye(3), np.round(_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2)),
             np.round(_axis_angle(np.array([0.0, 1.0, 0.0]), -np.pi / 2))]
    return level[rng.integers(3)] @ yaw


def _walk(config: SimulationConfig, rng: np.random.Generator):
    """Lattice random walk: uniformly among non-reversing moves that stay in bounds."""
    d, ext = config.dim, config.grid_extent
    cell = rng.integers(0, ext + 1, size=d).astype(float)
    R = _initial_heading(d, rng)
    turns = _turns(d)
    rotations, cells = [R], [cell]
    for _ in range(config.poses_per_robot - 1):
        options = []
        for T in turns:
            Rn = np.round(R @ T)
            nxt = cell + Rn[:, 0]
            if np.all(nxt >= 0) and np.all(nxt <= ext):
                options.append((Rn, nxt))
        if not options:  # boxed in (only on a degenerate grid): turn around
            Rn = np.round(R @ _turns(d)[1] @ _turns(d)[1])
            options.append((Rn, cell + Rn[:, 0]))
        R, cell = options[rng.integers(len(options))]
        rotations.append(R)
        cells.append(cell)
    return rotations, [c * config.step_length for c in cells]


# generation --------------------------------------------------------------------


def generate(config: SimulationConfig) -> tuple[RaSlamProblem, GroundTruth]:
    """Simulate one trial; deterministic given ``config.seed``.

    Random streams are split from one seed sequence: one per robot (motion
    and odometry noise), one for beacon placement and one for ranging.
    Beacons that end up with no range edge are not added to the problem.
    """
    d, noise = config.dim, config.noise
    root = np.random.SeedSequence(int(config.seed))
    robot_seeds = root.spawn(config.num_robots + 2)
    beacon_rng = np.random.default_rng(robot_seeds[-2])
    range_rng = np.random.default_rng(robot_seeds[-1])
    robot_rngs = [np.random.default_rng(s) for s in robot_seeds[:-2]]

    truth = Solution()
    problem = RaSlamProblem(d)
    kappa, tau = noise.kappa, noise.tau
    for r, rng in enumerate(robot_rngs):
        rotations, positions = _walk(config, rng)
        keys = [problem.add_pose_variable(r, k) for k in range(config.poses_per_robot)]
        for k, key in enumerate(keys):
            truth.rotations[key] = rotations[k]
            truth.translations[key] = positions[k]
        for k in range(1, len(keys)):
            Ri, Rj = rotations[k - 1], rotations[k]
            R_rel = Ri.T @ Rj
            t_rel = Ri.T @ (positions[k] - positions[k - 1])
            if config.add_noise:
                R_rel = R_rel @ sample_rotation_noise(kappa, d, rng)
                t_rel = t_rel + rng.standard_normal(d) * noise.translation_std
            problem.add_relative_pose_measurement(
                RelativePoseMeasurement(keys[k - 1], keys[k], R_rel, t_rel, kappa, tau)
            )

    beacons = {}
    for b in range(config.num_beacons):
        beacons[landmark_key(b)] = (
            beacon_rng.integers(0, config.grid_extent + 1, size=d) * config.step_length
        ).astype(float)

    partners_exist = config.num_robots + config.num_beacons >= 2
    if config.range_probability > 0 and not partners_exist:
        logger.warning("no ranging partner exists (1 robot, 0 beacons); no range edges generated")
    ranges: list[tuple[VariableKey, VariableKey, float]] = []
    if partners_exist:
        for k in range(1, config.poses_per_robot):
            for r in range(config.num_robots):
                if range_rng.uniform() >= config.range_probability:
                    continue
                choice = int(range_rng.integers(config.num_robots - 1 + config.num_beacons))
                a = pose_key(r, k)
                if choice < config.num_robots - 1:
                    other = choice if choice < r else choice + 1
                    b = pose_key(other, k)
                    pb = truth.translations[b]
                else:
                    b = landmark_key(choice - (config.num_robots - 1))
                    pb = beacons[b]
                dist = float(np.linalg.norm(truth.translations[a] - pb))
                ranges.append((a, b, dist))

    used = {b for _, b, _ in ranges if not b.is_pose}
    for key in sorted(beacons):
        if key in used:
            problem.add_landmark_variable(key.landmark)
            truth.landmark_positions[key] = beacons[key]
        else:
            logger.info("beacon %s received no range measurement; omitted", key)
    true_distances = []
    for a, b, dist in ranges:
        meas = dist + range_rng.standard_normal() * noise.sigma if config.add_noise else dist
        problem.add_range_measurement(RangeMeasurement(a, b, meas, noise.sigma))
        true_distances.append(dist)
    return problem, GroundTruth(truth, true_distances)
