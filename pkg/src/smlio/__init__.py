"""Set-membership LiDAR-inertial odometry with ellipsoidal protection levels."""

from .ellipsoid import (Box, DisjointSetsError, Ellipsoid, box_to_ellipsoid, contains,
                        intersect_outer, minkowski_sum_outer)
from .evaluation import TrajectoryRecord, ail, ate, cover_rate, end_to_end_error, evaluate
from .filter import NavState, StateBounds, predict, update
from .manifold import Pose, se3_exp, se3_log, so3_exp, so3_log
from .mapping import MapParams, PointMap
from .odometry import LidarInertialOdometry, OdometryConfig, run_odometry
from .registration import IcpParams, icp_point_to_plane, resolve_icp_uncertainty
from .sensing import (Extrinsics, ImuNoiseSpec, ImuSample, LidarNoiseSpec, Scan,
                      default_extrinsics)
from .simulation import SimulationSpec, TrajectorySpec, simulate_dataset

__all__ = [
    "Box", "DisjointSetsError", "Ellipsoid", "box_to_ellipsoid", "contains", "intersect_outer",
    "minkowski_sum_outer", "TrajectoryRecord", "ail", "ate", "cover_rate", "end_to_end_error",
    "evaluate", "NavState", "StateBounds", "predict", "update", "Pose", "se3_exp", "se3_log",
    "so3_exp", "so3_log", "MapParams", "PointMap", "LidarInertialOdometry", "OdometryConfig",
    "run_odometry", "IcpParams", "icp_point_to_plane", "resolve_icp_uncertainty", "Extrinsics",
    "ImuNoiseSpec", "ImuSample", "LidarNoiseSpec", "Scan", "default_extrinsics",
    "SimulationSpec", "TrajectorySpec", "simulate_dataset",
]
