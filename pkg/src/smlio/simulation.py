"""Synthetic world, trajectories and bounded-noise IMU / LiDAR streams.

Every noise sample drawn here lies inside the bound it is declared with, which
is the premise of the containment guarantee the estimator provides. The
default world is a closed 20 x 20 x 5 m room with four slanted panels, so any
interior pose sees at least three non-parallel planes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filter import NavState
from .manifold import Pose, tangent_basis_s2_batch
from .sensing import (DEFAULT_GRAVITY, Extrinsics, ImuNoiseSpec, ImuSample, default_extrinsics,
                      LidarNoiseSpec, Scan)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Patch:
    """Rectangle with centre ``anchor``, in-plane unit axes and half extents."""

    normal: np.ndarray
    anchor: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float

    @classmethod
    def make(cls, anchor, normal, half_u, half_v, up=(0.0, 0.0, 1.0)) -> "Patch":
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        up = np.asarray(up, float)
        u = np.cross(up, n)
        if np.linalg.norm(u) < 1e-9:
            u = np.cross([1.0, 0.0, 0.0], n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        if not (half_u > 0 and half_v > 0):
            raise SpecError("patch extents must be positive")
        return cls(n, np.asarray(anchor, float), u, v, float(half_u), float(half_v))


@dataclass(frozen=True)
class World:
    patches: tuple
    lower: np.ndarray
    upper: np.ndarray

    def raycast(self, origin, directions, min_range: float = 0.3,
                max_range: float = 100.0):
        """First patch hit along each unit direction; ``inf`` where nothing is hit."""
        o = np.asarray(origin, float)
        D = np.asarray(directions, float)
        best = np.full(D.shape[0], np.inf)
        which = np.full(D.shape[0], -1)
        for j, p in enumerate(self.patches):
            denom = D @ p.normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (p.normal @ (p.anchor - o)) / denom
            ok = np.abs(denom) > 1e-12
            ok &= (t >= min_range) & (t <= max_range)
            t = np.where(ok, t, 0.0)
            h = o + t[:, None] * D
            rel = h - p.anchor
            ok &= np.abs(rel @ p.axis_u) <= p.half_u
            ok &= np.abs(rel @ p.axis_v) <= p.half_v
            closer = ok & (t < best)
            best[closer] = t[closer]
            which[closer] = j
        return best, which

    def query_planes(self, points_W, max_dist: float = 1.0, margin: float = 0.05):
        """Exact plane correspondences (nearest patch whose extent covers the point)."""
        pts = np.asarray(points_W, float).reshape(-1, 3)
        m = pts.shape[0]
        best = np.full(m, np.inf)
        normals = np.zeros((m, 3))
        anchors = np.zeros((m, 3))
        for p in self.patches:
            rel = pts - p.anchor
            dist = rel @ p.normal
            inside = ((np.abs(rel @ p.axis_u) <= p.half_u + margin)
                      & (np.abs(rel @ p.axis_v) <= p.half_v + margin))
            closer = inside & (np.abs(dist) < best) & (np.abs(dist) <= max_dist)
            best[closer] = np.abs(dist[closer])
            sign = np.where(dist[closer] < 0.0, -1.0, 1.0)
            normals[closer] = sign[:, None] * p.normal
            anchors[closer] = p.anchor
        return np.isfinite(best), normals, anchors


def default_room() -> World:
    """20 x 20 x 5 m room around the default loop, plus four slanted panels."""
    lo = np.array([-10.0, -5.0, -1.5])
    hi = np.array([10.0, 15.0, 3.5])
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    patches = [
        Patch.make([c[0], c[1], lo[2]], [0, 0, 1], h[0], h[1], up=(0, 1, 0)),
        Patch.make([c[0], c[1], hi[2]], [0, 0, -1], h[0], h[1], up=(0, 1, 0)),
        Patch.make([lo[0], c[1], c[2]], [1, 0, 0], h[1], h[2]),
        Patch.make([hi[0], c[1], c[2]], [-1, 0, 0], h[1], h[2]),
        Patch.make([c[0], lo[1], c[2]], [0, 1, 0], h[0], h[2]),
        Patch.make([c[0], hi[1], c[2]], [0, -1, 0], h[0], h[2]),
    ]
    # panels in the corners, facing the loop centre and tipped a little
    for x, y, tip in ((-7.5, -2.5, 0.3), (7.5, -2.5, -0.2), (7.5, 12.5, 0.25), (-7.5, 12.5, -0.35)):
        toward = np.array([c[0] - x, c[1] - y, 0.0])
        toward /= np.linalg.norm(toward)
        n = toward * math.cos(tip) + np.array([0.0, 0.0, math.sin(tip)])
        patches.append(Patch.make([x, y, 0.5], n, 1.2, 1.5))
    return World(tuple(patches), lo, hi)


def single_plane_world(half: float = 50.0) -> World:
    """A lone floor at z = 0, for degenerate-registration scenarios."""
    p = Patch.make([0.0, 0.0, 0.0], [0, 0, 1], half, half, up=(0, 1, 0))
    return World((p,), np.array([-half, -half, -1.0]), np.array([half, half, 10.0]))


@dataclass(frozen=True)
class TrajectorySpec:
    """Parametric trajectory description.

    ``curve`` is one of ``stationary``, ``line``, ``circle`` or ``room_loop``.
    ``room_loop`` holds still for ``static_time`` seconds, spins up over
    ``ramp_time`` and then circles with small height and attitude wobble.
    """

    curve: str = "room_loop"
    duration: float = 60.0
    imu_rate: float = 200.0
    lidar_rate: float = 10.0
    radius: float = 5.0
    period: float = 20.0
    speed: float = 1.0
    direction: tuple = (1.0, 0.0, 0.0)
    static_time: float = 2.0
    ramp_time: float = 3.0
    height_amp: float = 0.3
    tilt_amp: float = 0.05

    def __post_init__(self):
        if self.curve not in ("stationary", "line", "circle", "room_loop"):
            raise SpecError(f"unknown trajectory curve {self.curve!r}")
        if not (self.duration > 0 and self.imu_rate > 0 and self.lidar_rate > 0):
            raise SpecError("duration and rates must be positive")
        ratio = self.imu_rate / self.lidar_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise SpecError("imu_rate must be an integer multiple of lidar_rate")
        if self.curve in ("circle", "room_loop") and not (self.radius > 0 and self.period > 0):
            raise SpecError("circular curves need positive radius and period")


@dataclass(frozen=True)
class Trajectory:
    """Ground truth sampled at IMU rate; accelerations are world-frame."""

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    accel_W: np.ndarray
    rotation: np.ndarray
    omega_B: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def state(self, k: int) -> NavState:
        return NavState(self.position[k], self.velocity[k], self.rotation[k], float(self.t[k]))

    def states(self) -> list[NavState]:
        return [self.state(k) for k in range(len(self))]

    def pose(self, k: int) -> Pose:
        return Pose(self.rotation[k], self.position[k])


def _smooth_phase(t, omega, t0, ramp):
    """Phase with a C2 spin-up: returns (theta, theta_dot, theta_ddot)."""
    t = np.asarray(t, float)
    th = np.zeros_like(t)
    thd = np.zeros_like(t)
    thdd = np.zeros_like(t)
    x = np.clip((t - t0) / ramp, 0.0, 1.0) if ramp > 0 else (t >= t0).astype(float)
    in_ramp = (t > t0) & (t < t0 + ramp)
    after = t >= t0 + ramp
    s = 6 * x ** 5 - 15 * x ** 4 + 10 * x ** 3
    ds = (30 * x ** 4 - 60 * x ** 3 + 30 * x ** 2) / ramp if ramp > 0 else 0.0 * x
    integ = x ** 6 - 3 * x ** 5 + 2.5 * x ** 4
    th[in_ramp] = omega * ramp * integ[in_ramp]
    thd[in_ramp] = omega * s[in_ramp]
    thdd[in_ramp] = omega * ds[in_ramp]
    th[after] = omega * (0.5 * ramp + (t[after] - t0 - ramp))
    thd[after] = omega
    return th, thd, thdd


def _zyx(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    R = np.empty(yaw.shape + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def _zyx_body_rate(pitch, roll, dyaw, dpitch, droll):
    return np.stack([
        droll - dyaw * np.sin(pitch),
        dpitch * np.cos(roll) + dyaw * np.sin(roll) * np.cos(pitch),
        -dpitch * np.sin(roll) + dyaw * np.cos(roll) * np.cos(pitch),
    ], axis=-1)


def simulate_trajectory(spec: TrajectorySpec) -> Trajectory:
    n = int(round(spec.duration * spec.imu_rate))
    t = np.arange(n) / spec.imu_rate
    zeros = np.zeros((n, 3))
    if spec.curve == "stationary":
        R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return Trajectory(t, zeros.copy(), zeros.copy(), zeros.copy(), R, zeros.copy())
    if spec.curve == "line":
        d = np.asarray(spec.direction, float)
        if np.linalg.norm(d) == 0:
            raise SpecError("line direction must be nonzero")
        v = spec.speed * d / np.linalg.norm(d)
        R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return Trajectory(t, t[:, None] * v, np.tile(v, (n, 1)), zeros.copy(), R, zeros.copy())

    omega = 2 * math.pi / spec.period
    r = spec.radius
    if spec.curve == "circle":
        th, thd, thdd = omega * t, np.full(n, omega), np.zeros(n)
        h_amp, tilt = 0.0, 0.0
    else:
        th, thd, thdd = _smooth_phase(t, omega, spec.static_time, spec.ramp_time)
        h_amp, tilt = spec.height_amp, spec.tilt_amp

    # position f(theta) and its first two theta-derivatives
    f = np.stack([r * np.sin(th), r * (1 - np.cos(th)), h_amp * np.sin(2 * th)], axis=1)
    f1 = np.stack([r * np.cos(th), r * np.sin(th), 2 * h_amp * np.cos(2 * th)], axis=1)
    f2 = np.stack([-r * np.sin(th), r * np.cos(th), -4 * h_amp * np.sin(2 * th)], axis=1)
    pos = f
    vel = f1 * thd[:, None]
    acc = f2 * (thd ** 2)[:, None] + f1 * thdd[:, None]

    yaw = th
    pitch = tilt * np.sin(2 * th)
    roll = tilt * np.sin(3 * th)
    dyaw = thd
    dpitch = 2 * tilt * np.cos(2 * th) * thd
    droll = 3 * tilt * np.cos(3 * th) * thd
    R = _zyx(yaw, pitch, roll)
    w = _zyx_body_rate(pitch, roll, dyaw, dpitch, droll)
    return Trajectory(t, pos, vel, acc, R, w)


def _box_noise(rng, bound: float, n: int, adversarial: bool) -> np.ndarray:
    if adversarial:
        return bound * rng.choice([-1.0, 1.0], size=(n, 3))
    return rng.uniform(-bound, bound, size=(n, 3))


def ideal_imu(truth: Trajectory, biases=(np.zeros(3), np.zeros(3)),
              gravity_magnitude: float = DEFAULT_GRAVITY):
    """Noise-free accelerometer and gyroscope readings (with biases)."""
    g = np.array([0.0, 0.0, -gravity_magnitude])
    acc = np.einsum("nji,nj->ni", truth.rotation, truth.accel_W - g) + np.asarray(biases[0], float)
    gyr = truth.omega_B + np.asarray(biases[1], float)
    return acc, gyr


def synthesize_imu(truth: Trajectory, biases, noise: ImuNoiseSpec, rng_seed: int,
                   gravity_magnitude: float = DEFAULT_GRAVITY,
                   adversarial: bool = False) -> list[ImuSample]:
    """Measurements ``R^T (a_W - g) + b_a + n_a`` and ``omega + b_g + n_g``.

    Noise is uniform in the box ``[-b, b]^3`` (or on its corners when
    ``adversarial``), which lies inside ``E(0, diag(3 b^2))``.
    """
    acc, gyr = ideal_imu(truth, biases, gravity_magnitude)
    rng = np.random.default_rng(rng_seed)
    n = len(truth)
    acc = acc + _box_noise(rng, noise.b_a, n, adversarial)
    gyr = gyr + _box_noise(rng, noise.b_g, n, adversarial)
    return [ImuSample(float(t), a, w) for t, a, w in zip(truth.t, acc, gyr)]


@dataclass(frozen=True)
class BeamPattern:
    n_azimuth: int = 90
    elevations_deg: tuple = tuple(np.linspace(-15.0, 15.0, 16))
    min_range: float = 0.3
    max_range: float = 100.0

    def directions(self) -> np.ndarray:
        az = np.arange(self.n_azimuth) * (2 * math.pi / self.n_azimuth)
        el = np.radians(np.asarray(self.elevations_deg, float))
        A, E = np.meshgrid(az, el, indexing="xy")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


def cast_beams(pose_I: Pose, world: World, pattern: BeamPattern,
               ext: Extrinsics | None = None):
    """True ranges and LiDAR-frame bearings of every beam that hits a patch."""
    ext = ext or Extrinsics()
    R_WL = pose_I.rotation @ ext.rotation
    o = pose_I.rotation @ ext.translation + pose_I.translation
    dirs_L = pattern.directions()
    dist, which = world.raycast(o, dirs_L @ R_WL.T, pattern.min_range, pattern.max_range)
    hit = np.isfinite(dist)
    return dist[hit], dirs_L[hit], which[hit]


def synthesize_scan(pose, world: World, spec: LidarNoiseSpec, pattern: BeamPattern | None = None,
                    rng_seed=0, ext: Extrinsics | None = None, adversarial: bool = False,
                    timestamp: float | None = None) -> Scan:
    """Noisy scan from the true IMU pose (a ``Pose`` or ``NavState``).

    The emitted range is ``d - n_d`` and the emitted bearing is the true one
    retracted by ``-n_phi``, with ``|n_d| <= b_r`` and ``||n_phi|| <= b_phi``.
    """
    pattern = pattern or BeamPattern()
    if isinstance(pose, NavState):
        timestamp = pose.timestamp if timestamp is None else timestamp
        pose = pose.pose
    d, phi, _ = cast_beams(pose, world, pattern, ext)
    rng = np.random.default_rng(rng_seed)
    m = d.size
    if adversarial:
        n_d = spec.b_r * rng.choice([-1.0, 1.0], size=m)
        ang = rng.uniform(0.0, 2 * math.pi, size=m)
        mag = np.full(m, spec.b_phi)
    else:
        n_d = rng.uniform(-spec.b_r, spec.b_r, size=m)
        ang = rng.uniform(0.0, 2 * math.pi, size=m)
        mag = spec.b_phi * np.sqrt(rng.uniform(0.0, 1.0, size=m))
    n_phi = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)
    N = tangent_basis_s2_batch(phi)
    rotvec = -np.einsum("mij,mj->mi", N, n_phi)
    bearings = _rotate(rotvec, phi)
    return Scan(0.0 if timestamp is None else float(timestamp), d - n_d, bearings)


def _rotate(rotvecs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of each row of ``v`` by the matching rotation vector."""
    ang = np.linalg.norm(rotvecs, axis=1)
    k = np.divide(rotvecs, ang[:, None], out=np.zeros_like(rotvecs), where=ang[:, None] > 0)
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    out = v * c + np.cross(k, v) * s + k * np.sum(k * v, axis=1, keepdims=True) * (1 - c)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


@dataclass(frozen=True)
class SimulationSpec:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    lidar_noise: LidarNoiseSpec = field(default_factory=LidarNoiseSpec)
    imu_noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    accel_bias: tuple = (0.004, -0.003, 0.002)
    gyro_bias: tuple = (0.002, -0.001, 0.0015)
    extrinsics: Extrinsics = field(default_factory=default_extrinsics)
    pattern: BeamPattern = field(default_factory=BeamPattern)
    seed: int = 0
    adversarial: bool = False
    gravity: float = DEFAULT_GRAVITY


@dataclass(frozen=True)
class SimulatedDataset:
    imu: list
    scans: list
    truth: Trajectory
    scan_indices: np.ndarray


def simulate_dataset(spec: SimulationSpec, world: World | None = None) -> SimulatedDataset:
    """Truth plus IMU and LiDAR streams; deterministic under ``spec.seed``."""
    world = world or default_room()
    truth = simulate_trajectory(spec.trajectory)
    imu = synthesize_imu(truth, (spec.accel_bias, spec.gyro_bias), spec.imu_noise,
                         rng_seed=spec.seed, gravity_magnitude=spec.gravity,
                         adversarial=spec.adversarial)
    step = int(round(spec.trajectory.imu_rate / spec.trajectory.lidar_rate))
    idx = np.arange(0, len(truth), step)
    scans = [synthesize_scan(truth.pose(k), world, spec.lidar_noise, spec.pattern,
                             rng_seed=(spec.seed, 1, int(j)), ext=spec.extrinsics,
                             adversarial=spec.adversarial, timestamp=float(truth.t[k]))
             for j, k in enumerate(idx)]
    return SimulatedDataset(imu, scans, truth, idx)
