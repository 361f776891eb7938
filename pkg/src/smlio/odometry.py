"""The LiDAR-inertial pipeline: static init, IMU prediction, scan registration,
uncertainty resolving, set-membership update and map maintenance."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ellipsoid import PSD_FLOOR
from .filter import (DT_MAX, LocalMapRecord, NavState, StateBounds, UpdateReport,
                     maybe_close_local_map, predict, propagate_global, update,
                     icp_translation_set)
from .manifold import Pose
from .mapping import MapParams, PointMap
from .registration import (IcpParams, RegistrationError, gate_icp, icp_point_to_plane,
                           resolve_icp_uncertainty)
from .sensing import (DEFAULT_GRAVITY, Extrinsics, ImuNoiseSpec, ImuSample, default_extrinsics,
                      LidarNoiseSpec, Scan, point_noise_ellipsoids, static_initialize)

log = logging.getLogger(__name__)

TIMING_STAGES = ("icp", "uncertainty", "filter", "map")


def default_p_nl(scale: float = 1e-4) -> np.ndarray:
    """Shape bounding the higher-order remainder of the increment linearization."""
    return 3 * scale ** 2 * np.eye(6)


@dataclass(frozen=True)
class OdometryConfig:
    lidar_noise: LidarNoiseSpec = field(default_factory=LidarNoiseSpec)
    imu_noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    icp: IcpParams = field(default_factory=IcpParams)
    map: MapParams = field(default_factory=MapParams)
    extrinsics: Extrinsics = field(default_factory=default_extrinsics)
    p_nl: np.ndarray = field(default_factory=default_p_nl)
    nl_mode: str = "per_point"
    init_duration: float = 1.5
    init_radius_t: float = 0.0
    init_radius_v: float = 0.01
    init_radius_theta: float = 0.005
    gravity: float = DEFAULT_GRAVITY
    dt_max: float = DT_MAX
    on_disjoint: str = "skip"
    floor: float = PSD_FLOOR


@dataclass(frozen=True)
class StepRecord:
    """Estimator output at one scan time."""

    timestamp: float
    state: NavState
    bounds: StateBounds
    protection: object
    accepted: bool
    report: UpdateReport | None
    timing: dict


@dataclass
class OdometryResult:
    records: list
    map: PointMap
    history: list
    init: tuple

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records])

    @property
    def translations(self) -> np.ndarray:
        return np.array([r.state.translation for r in self.records])

    @property
    def protection_shapes(self) -> np.ndarray:
        return np.array([r.protection.translation_set.shape for r in self.records])


class LidarInertialOdometry:
    """Sequential estimator; feed IMU samples and scans in timestamp order."""

    def __init__(self, config: OdometryConfig | None = None):
        self.config = config or OdometryConfig()
        self.map = PointMap(self.config.map)
        self.history: list[LocalMapRecord] = []
        self.records: list[StepRecord] = []
        self.state: NavState | None = None
        self.bounds: StateBounds | None = None
        self.biases = None
        self.gravity_W = None
        self.prev_icp = None
        self._init_buffer: list[ImuSample] = []
        self._last_imu: ImuSample | None = None
        self.init_result = None

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def _initialize(self) -> None:
        cfg = self.config
        b_a, b_g, g_W, R0 = static_initialize(self._init_buffer, cfg.gravity,
                                              min_samples=min(200, len(self._init_buffer)))
        self.biases = (b_a, b_g)
        self.gravity_W = g_W
        t0 = self._init_buffer[-1].timestamp
        self.state = NavState(np.zeros(3), np.zeros(3), R0, t0)
        self.bounds = StateBounds.from_radii(cfg.init_radius_t, cfg.init_radius_v,
                                             cfg.init_radius_theta, cfg.floor)
        self._last_imu = self._init_buffer[-1]
        self.init_result = (b_a, b_g, g_W, R0)

    def add_imu(self, sample: ImuSample) -> None:
        if not self.initialized:
            self._init_buffer.append(sample)
            span = sample.timestamp - self._init_buffer[0].timestamp
            if span + 1e-9 >= self.config.init_duration:
                self._initialize()
            return
        dt = sample.timestamp - self._last_imu.timestamp
        if dt <= 0.0:
            return
        # zero-order hold on the previous sample, matching a forward Euler step
        self.state, self.bounds = predict(self.state, self.bounds, self._last_imu, self.biases,
                                          self.config.imu_noise, dt, self.gravity_W,
                                          self.config.dt_max, self.config.floor)
        self._last_imu = sample

    def add_scan(self, scan: Scan) -> StepRecord | None:
        if not self.initialized:
            return None
        cfg = self.config
        timing = dict.fromkeys(TIMING_STAGES, 0.0)
        points_I, shapes_I = point_noise_ellipsoids(scan.ranges, scan.bearings, cfg.lidar_noise,
                                                    cfg.extrinsics, cfg.floor)
        accepted = False
        report = None
        if len(self.map) == 0:
            tic = time.perf_counter()
            self.map.insert_scan(self.state.pose.apply(points_I))
            timing["map"] = time.perf_counter() - tic
        else:
            tic = time.perf_counter()
            try:
                result = icp_point_to_plane(points_I, shapes_I, self.map, self.state.pose, cfg.icp)
                ok = gate_icp(result, cfg.icp.gate_tol)
            except RegistrationError as exc:
                log.warning("scan at %.3f s not registered: %s", scan.timestamp, exc)
                result, ok = None, False
            timing["icp"] = time.perf_counter() - tic
            if ok:
                tic = time.perf_counter()
                unc = resolve_icp_uncertainty(result, cfg.p_nl, cfg.nl_mode, cfg.floor)
                timing["uncertainty"] = time.perf_counter() - tic
                tic = time.perf_counter()
                prev = None
                dt = None
                if self.prev_icp is not None:
                    prev = self.prev_icp[1:]
                    dt = scan.timestamp - self.prev_icp[0]
                self.state, self.bounds, report = update(
                    self.state, self.bounds, result.pose, unc, prev, dt,
                    cfg.on_disjoint, cfg.floor)
                t_obs, Q_t = icp_translation_set(result.pose, unc, cfg.floor)
                self.prev_icp = (scan.timestamp, t_obs, Q_t)
                self._maybe_switch_local_map()
                timing["filter"] = time.perf_counter() - tic
                tic = time.perf_counter()
                self.map.insert_scan(self.state.pose.apply(points_I))
                timing["map"] = time.perf_counter() - tic
                accepted = True
            else:
                self.prev_icp = None
        rec = StepRecord(scan.timestamp, self.state, self.bounds,
                         propagate_global(self.bounds, self.history, cfg.floor),
                         accepted, report, timing)
        self.records.append(rec)
        return rec

    def _maybe_switch_local_map(self) -> None:
        rec = maybe_close_local_map(self.state.translation, self.bounds, self.map.origin,
                                    self.config.map.local_map_radius, len(self.history))
        if rec is None:
            return
        self.history.append(rec)
        self.bounds = StateBounds.at_floor(self.config.floor)
        self.map.start_new_local_map(self.state.translation)

    def result(self) -> OdometryResult:
        return OdometryResult(self.records, self.map, self.history, self.init_result)


def run_odometry(imu: Sequence[ImuSample], scans: Iterable[Scan],
                 config: OdometryConfig | None = None) -> OdometryResult:
    """Merge both streams by timestamp (IMU first on ties) and run the estimator."""
    odo = LidarInertialOdometry(config)
    scans = sorted(scans, key=lambda s: s.timestamp)
    j = 0
    for s in imu:
        while j < len(scans) and scans[j].timestamp < s.timestamp:
            odo.add_scan(scans[j])
            j += 1
        odo.add_imu(s)
    for sc in scans[j:]:
        odo.add_scan(sc)
    return odo.result()
