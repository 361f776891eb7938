"""Sensor data types, unknown-but-bounded noise models and static initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ellipsoid import PSD_FLOOR, regularize
from .manifold import is_rotation, rotation_between, skew, tangent_basis_s2_batch

DEFAULT_GRAVITY = 9.81


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PointMeasurement:
    range: float
    bearing: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.bearing, dtype=float).reshape(3)
        if not self.range > 0.0:
            raise ValueError(f"range must be positive, got {self.range}")
        if abs(float(np.linalg.norm(b)) - 1.0) > 1e-6:
            raise ValueError("bearing must be a unit vector")
        object.__setattr__(self, "bearing", b)

    @property
    def point(self) -> np.ndarray:
        return self.range * self.bearing


@dataclass(frozen=True)
class Scan:
    """One LiDAR sweep as parallel range / bearing arrays in the LiDAR frame."""

    timestamp: float
    ranges: np.ndarray
    bearings: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=float).reshape(-1)
        b = np.asarray(self.bearings, dtype=float).reshape(-1, 3)
        if r.size != b.shape[0]:
            raise ValueError("ranges and bearings differ in length")
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "bearings", b)

    def __len__(self) -> int:
        return self.ranges.size

    def points(self) -> np.ndarray:
        return self.ranges[:, None] * self.bearings

    def measurements(self) -> list[PointMeasurement]:
        return [PointMeasurement(float(r), b, self.timestamp)
                for r, b in zip(self.ranges, self.bearings)]

    @classmethod
    def from_points(cls, timestamp: float, xyz) -> "Scan":
        """Build a scan from Cartesian points by recovering range and bearing."""
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        r = np.linalg.norm(xyz, axis=1)
        keep = r > 0.0
        return cls(timestamp, r[keep], xyz[keep] / r[keep, None])


@dataclass(frozen=True)
class LidarNoiseSpec:
    """Range bound ``b_r`` (m) and bearing bound ``b_phi`` (rad).

    Zero bounds are allowed and describe a noiseless sensor; the resulting
    shapes are lifted to the PSD floor.
    """

    b_r: float = 0.08
    b_phi: float = math.radians(0.1)

    def __post_init__(self):
        if self.b_r < 0.0 or self.b_phi < 0.0:
            raise ValueError("LiDAR noise bounds must be non-negative")

    def shape(self) -> np.ndarray:
        """Outer ellipsoid of the (range, bearing) noise box."""
        return np.diag([3 * self.b_r ** 2, 3 * self.b_phi ** 2, 3 * self.b_phi ** 2])


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.accel, dtype=float).reshape(3)
        g = np.asarray(self.gyro, dtype=float).reshape(3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise ValueError("IMU sample must be finite")
        object.__setattr__(self, "accel", a)
        object.__setattr__(self, "gyro", g)


def _bias_shape(bound: float) -> np.ndarray:
    return np.diag([3 * (0.1 * bound) ** 2] * 3)


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Accelerometer / gyroscope noise bounds plus bias-error shape matrices.

    When the bias shapes are omitted they default to ``diag(3 (0.1 b)^2)``.
    """

    b_a: float = 0.2
    b_g: float = 0.07
    P_ba: np.ndarray | None = None
    P_bg: np.ndarray | None = None

    def __post_init__(self):
        if self.b_a < 0.0 or self.b_g < 0.0:
            raise ValueError("IMU noise bounds must be non-negative")
        P_ba = _bias_shape(self.b_a) if self.P_ba is None else np.asarray(self.P_ba, float)
        P_bg = _bias_shape(self.b_g) if self.P_bg is None else np.asarray(self.P_bg, float)
        for name, P in (("P_ba", P_ba), ("P_bg", P_bg)):
            if P.shape != (3, 3) or np.linalg.eigvalsh(0.5 * (P + P.T))[0] < 0.0:
                raise ValueError(f"{name} must be a 3x3 PSD matrix")
        object.__setattr__(self, "P_ba", P_ba)
        object.__setattr__(self, "P_bg", P_bg)

    @property
    def N_a(self) -> np.ndarray:
        return 3 * self.b_a ** 2 * np.eye(3)

    @property
    def N_g(self) -> np.ndarray:
        return 3 * self.b_g ** 2 * np.eye(3)


@dataclass(frozen=True)
class Extrinsics:
    """LiDAR-to-IMU transform: ``p_I = rotation @ p_L + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(R):
            raise ValueError("extrinsic rotation is not a valid rotation matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))


def default_extrinsics() -> Extrinsics:
    """LiDAR mounted 0.1 m above the IMU with aligned axes; shared by simulator and estimator."""
    return Extrinsics(np.eye(3), [0.0, 0.0, 0.1])


def point_noise_ellipsoids(ranges, bearings, spec: LidarNoiseSpec,
                           ext: Extrinsics | None = None,
                           floor: float = PSD_FLOOR):
    """Vectorized point model for a whole scan.

    Returns ``(points_I, shapes_I)`` with shapes ``(m, 3)`` and ``(m, 3, 3)``.
    Each shape bounds ``p_true - p_measured`` expressed in the IMU frame.
    """
    ext = ext or Extrinsics()
    d = np.asarray(ranges, dtype=float).reshape(-1)
    phi = np.asarray(bearings, dtype=float).reshape(-1, 3)
    m = d.size
    N = tangent_basis_s2_batch(phi)                       # (m, 3, 2)
    # phi^ N(phi) via cross products of phi with each tangent column
    cross = np.cross(phi[:, :, None], N, axisa=1, axisb=1, axisc=1)
    A = np.empty((m, 3, 3))
    A[:, :, 0] = phi
    A[:, :, 1:] = -d[:, None, None] * cross
    Pp = spec.shape()
    shapes_L = np.einsum("mij,jk,mlk->mil", A, Pp, A)
    R = ext.rotation
    shapes_I = np.einsum("ij,mjk,lk->mil", R, shapes_L, R)
    shapes_I = 0.5 * (shapes_I + np.swapaxes(shapes_I, 1, 2))
    # lift to the floor; a uniform diagonal shift is enough since each shape
    # is PSD by construction
    shapes_I = shapes_I + floor * np.eye(3)
    points_I = (d[:, None] * phi) @ R.T + ext.translation
    return points_I, shapes_I


def point_noise_ellipsoid(m: PointMeasurement, spec: LidarNoiseSpec,
                          ext: Extrinsics | None = None):
    """Measured point in the IMU frame and the shape bounding its deviation."""
    ext = ext or Extrinsics()
    A = np.column_stack([m.bearing,
                         -m.range * skew(m.bearing) @ tangent_basis_s2_batch(m.bearing[None])[0]])
    P = ext.rotation @ (A @ spec.shape() @ A.T) @ ext.rotation.T
    return ext.rotation @ m.point + ext.translation, regularize(P)


def static_initialize(samples: Sequence[ImuSample],
                      gravity_magnitude: float = DEFAULT_GRAVITY,
                      min_samples: int = 200,
                      max_accel_var: float = 0.05,
                      max_gyro_var: float = 0.01):
    """Estimate biases, gravity and the initial attitude from a still window.

    The mean specific force fixes the up direction; the initial rotation is the
    minimal rotation taking it onto the world z axis, so yaw is zero by
    construction. Returns ``(b_a, b_g, gravity_W, R0)``.

    Raises:
        InitializationError: too few samples, or the window is not still.
    """
    if len(samples) < min_samples:
        raise InitializationError(
            f"static initialization needs {min_samples} samples, got {len(samples)}")
    acc = np.array([s.accel for s in samples])
    gyr = np.array([s.gyro for s in samples])
    acc_var = float(np.max(np.var(acc, axis=0)))
    gyr_var = float(np.max(np.var(gyr, axis=0)))
    if acc_var > max_accel_var or gyr_var > max_gyro_var:
        raise InitializationError(
            f"motion detected during initialization: accel variance {acc_var:.4g}, "
            f"gyro variance {gyr_var:.4g}")
    mean_acc = acc.mean(axis=0)
    b_g = gyr.mean(axis=0)
    R0 = rotation_between(mean_acc, np.array([0.0, 0.0, 1.0]))
    gravity_W = np.array([0.0, 0.0, -gravity_magnitude])
    b_a = mean_acc - R0.T @ (-gravity_W)
    return b_a, b_g, gravity_W, R0
