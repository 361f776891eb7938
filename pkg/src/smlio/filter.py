"""On-manifold ellipsoidal set-membership filter.

The state is ``(t, v, R)`` on R^6 x SO(3). The filter carries a nominal state
and three zero-centred ellipsoids that bound the error state ``(dt, dv, dtheta)``
with ``R_true = R_nominal Exp(dtheta)``. Prediction pushes the sets through the
IMU error dynamics with minimum-trace Minkowski sums; the update intersects
them with the sets implied by a registered LiDAR pose, folds the intersection
centres into the nominal state and resets the centres to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ellipsoid import (PSD_FLOOR, DisjointSetsError, Ellipsoid, intersect_arrays,
                        minkowski_sum_shapes, regularize)
from .manifold import (Pose, orthonormalize, so3_exp, so3_log, so3_right_jacobian_inv)
from .registration import IcpUncertainty
from .sensing import ImuNoiseSpec, ImuSample

log = logging.getLogger(__name__)

DT_MAX = 0.02
DISJOINT_POLICIES = ("skip", "raise", "observe")


class TimingError(ValueError):
    pass


class InconsistencyError(RuntimeError):
    """Predicted and observed sets are disjoint."""


@dataclass(frozen=True)
class NavState:
    translation: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    timestamp: float = 0.0

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.translation)


def _zero_set(P) -> Ellipsoid:
    return Ellipsoid._trusted(np.zeros(3), P)


@dataclass(frozen=True)
class StateBounds:
    t_set: Ellipsoid
    v_set: Ellipsoid
    theta_set: Ellipsoid

    @classmethod
    def from_shapes(cls, P_t, P_v, P_theta, floor: float = PSD_FLOOR) -> "StateBounds":
        return cls(_zero_set(regularize(P_t, floor)),
                   _zero_set(regularize(P_v, floor)),
                   _zero_set(regularize(P_theta, floor)))

    @classmethod
    def from_radii(cls, r_t: float, r_v: float, r_theta: float,
                   floor: float = PSD_FLOOR) -> "StateBounds":
        """Sets enclosing per-axis boxes of the given half-widths."""
        I = np.eye(3)
        return cls.from_shapes(3 * r_t ** 2 * I, 3 * r_v ** 2 * I,
                               3 * r_theta ** 2 * I, floor)

    @classmethod
    def at_floor(cls, floor: float = PSD_FLOOR) -> "StateBounds":
        return cls.from_shapes(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), floor)

    @property
    def P_t(self) -> np.ndarray:
        return self.t_set.shape

    @property
    def P_v(self) -> np.ndarray:
        return self.v_set.shape

    @property
    def P_theta(self) -> np.ndarray:
        return self.theta_set.shape


@dataclass(frozen=True)
class ProtectionLevel:
    translation_set: Ellipsoid
    velocity_set: Ellipsoid
    rotation_set: Ellipsoid


@dataclass(frozen=True)
class LocalMapRecord:
    origin_index: int
    origin: np.ndarray
    bounds: StateBounds


@dataclass(frozen=True)
class UpdateReport:
    """Which parts of an update were applied, and why any were not."""

    translation: str = "applied"
    velocity: str = "applied"
    rotation: str = "applied"

    @property
    def inconsistent(self) -> bool:
        return "disjoint" in (self.translation, self.velocity, self.rotation)


def predict(state: NavState, bounds: StateBounds, imu: ImuSample, biases,
            noise: ImuNoiseSpec, dt: float, gravity, dt_max: float = DT_MAX,
            floor: float = PSD_FLOOR):
    """Propagate the nominal state and the error sets across one IMU interval.

    Raises:
        TimingError: ``dt`` is not in ``(0, dt_max]``.
    """
    if not 0.0 < dt <= dt_max:
        raise TimingError(f"IMU interval {dt:.6g} s outside (0, {dt_max}]")
    b_a, b_g = biases
    R = state.rotation
    acc = imu.accel - b_a
    omega = imu.gyro - b_g
    g = np.asarray(gravity, dtype=float)
    a_W = R @ acc
    t_new = state.translation + state.velocity * dt + 0.5 * (a_W + g) * dt * dt
    v_new = state.velocity + (a_W + g) * dt
    R_new = R @ so3_exp(omega * dt)

    dt2 = dt * dt
    ax, ay, az = acc
    acc_hat = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    C = -R @ acc_hat * dt
    D = -R * dt
    E = so3_exp(-omega * dt)
    Pt, Pv, Pth = bounds.P_t, bounds.P_v, bounds.P_theta
    Pt_new = minkowski_sum_shapes(np.stack([Pt, dt2 * Pv]), floor)
    Pv_new = minkowski_sum_shapes(np.stack([Pv, C @ Pth @ C.T, D @ noise.P_ba @ D.T,
                                            dt2 * noise.N_a]), floor)
    Pth_new = minkowski_sum_shapes(np.stack([E @ Pth @ E.T, dt2 * noise.P_bg,
                                             dt2 * noise.N_g]), floor)
    new_state = NavState(t_new, v_new, R_new, state.timestamp + dt)
    return new_state, StateBounds(_zero_set(Pt_new), _zero_set(Pv_new), _zero_set(Pth_new))


def icp_translation_set(icp_pose: Pose, icp_unc: IcpUncertainty, floor: float = PSD_FLOOR):
    """World-frame translation observation ``(t*, Q_t)``.

    The rho block is expressed in the body frame of the registered pose, so it
    is rotated into the world frame by that pose's rotation.
    """
    R = icp_pose.rotation
    return icp_pose.translation.copy(), regularize(R @ icp_unc.translation_shape @ R.T, floor)


def _fuse(P_pred, obs_center, obs_shape, policy: str, label: str, floor: float):
    """Intersect ``E(0, P_pred)`` with the observation, honouring the disjoint policy."""
    try:
        center, P, _ = intersect_arrays(np.zeros(3), P_pred, obs_center, obs_shape, floor=floor)
        return center, P, "applied"
    except DisjointSetsError as exc:
        if policy == "raise":
            raise InconsistencyError(f"{label} update: {exc}") from exc
        log.warning("%s update skipped: %s", label, exc)
        if policy == "observe":
            return np.asarray(obs_center, float), regularize(obs_shape, floor), "disjoint-observed"
        return np.zeros(3), P_pred, "disjoint"


def update(predicted_state: NavState, predicted_bounds: StateBounds, icp_pose: Pose,
           icp_unc: IcpUncertainty, prev_icp=None, dt: float | None = None,
           on_disjoint: str = "skip", floor: float = PSD_FLOOR):
    """Fuse a registered pose into the predicted state.

    Args:
        prev_icp: ``(t*_prev, Q_t_prev)`` from the previous accepted update, or
            None to skip the velocity update.
        dt: time since ``prev_icp`` was observed.
        on_disjoint: ``"skip"`` keeps the prediction for a component whose sets
            do not intersect, ``"observe"`` adopts the observation set instead,
            ``"raise"`` raises :class:`InconsistencyError`.

    Returns:
        ``(state, bounds, report)`` with all error-set centres reset to zero.
    """
    if on_disjoint not in DISJOINT_POLICIES:
        raise ValueError(f"unknown disjoint policy {on_disjoint!r}")
    t_chk = predicted_state.translation
    v_chk = predicted_state.velocity
    R_chk = predicted_state.rotation

    t_obs, Q_t = icp_translation_set(icp_pose, icp_unc, floor)
    dt_err, P_t, st_t = _fuse(predicted_bounds.P_t, t_obs - t_chk, Q_t,
                              on_disjoint, "translation", floor)

    if prev_icp is not None and dt is not None and dt > 0.0:
        t_prev, Q_prev = prev_icp
        Q_dt = minkowski_sum_shapes(np.stack([Q_t, Q_prev]), floor)
        v_obs = (t_obs - t_prev) / dt
        dv_err, P_v, st_v = _fuse(predicted_bounds.P_v, v_obs - v_chk, Q_dt / (dt * dt),
                                  on_disjoint, "velocity", floor)
    else:
        dv_err, P_v, st_v = np.zeros(3), predicted_bounds.P_v, "no-previous"

    a = so3_log(R_chk.T @ icp_pose.rotation)
    Jinv = so3_right_jacobian_inv(a)
    Q_r = Jinv @ icp_unc.rotation_shape @ Jinv.T
    dth_err, P_th, st_r = _fuse(predicted_bounds.P_theta, a, Q_r, on_disjoint, "rotation", floor)

    state = NavState(t_chk + dt_err, v_chk + dv_err,
                     orthonormalize(R_chk @ so3_exp(dth_err)), predicted_state.timestamp)
    bounds = StateBounds(_zero_set(P_t), _zero_set(P_v), _zero_set(P_th))
    return state, bounds, UpdateReport(st_t, st_v, st_r)


def propagate_global(bounds: StateBounds, history: Sequence[LocalMapRecord],
                     floor: float = PSD_FLOOR) -> ProtectionLevel:
    """Current error sets inflated by the closing sets of all previous local maps."""
    if not history:
        return ProtectionLevel(bounds.t_set, bounds.v_set, bounds.theta_set)

    def total(own, attr):
        return _zero_set(minkowski_sum_shapes(
            np.stack([own] + [getattr(r.bounds, attr) for r in history]), floor))

    return ProtectionLevel(total(bounds.P_t, "P_t"), total(bounds.P_v, "P_v"),
                           total(bounds.P_theta, "P_theta"))


def maybe_close_local_map(position, bounds: StateBounds, origin, local_map_radius: float,
                          index: int = 0) -> LocalMapRecord | None:
    """Snapshot the bounds once the robot is farther than the radius from the origin."""
    dist = float(np.linalg.norm(np.asarray(position, float) - np.asarray(origin, float)))
    if dist <= local_map_radius:
        return None
    return LocalMapRecord(index, np.asarray(origin, float).copy(), bounds)
