"""Small synthetic scenes shared by the registration and acceptance tests."""

import numpy as np

from smlio.manifold import Pose, so3_exp
from smlio.sensing import LidarNoiseSpec, point_noise_ellipsoids
from smlio.simulation import BeamPattern, Patch, World, default_room, synthesize_scan


def corner_world() -> World:
    """Floor plus two walls meeting at the origin, 20 m on a side."""
    patches = (
        Patch.make([10, 10, 0], [0, 0, 1], 10, 10, up=(0, 1, 0)),
        Patch.make([0, 10, 5], [1, 0, 0], 10, 5),
        Patch.make([10, 0, 5], [0, 1, 0], 10, 5),
    )
    return World(patches, np.array([0, 0, 0.0]), np.array([20, 20, 10.0]))


def tilted_world() -> World:
    """Three mutually oblique panels in front of the sensor."""
    patches = (
        Patch.make([0, 0, -1.0], [0.1, 0.05, 1], 8, 8),
        Patch.make([6, 0, 1], [-1, 0.3, 0.1], 6, 4),
        Patch.make([0, 6, 1], [0.2, -1, -0.1], 6, 4),
        Patch.make([-5, -5, 1], [1, 1, 0.2], 3, 3),
    )
    return World(patches, np.array([-10, -10, -2.0]), np.array([10, 10, 6.0]))


def scenes():
    """Five (world, true pose) pairs."""
    return [
        (corner_world(), Pose(so3_exp([0.02, -0.03, 0.4]), [4.0, 5.0, 1.5])),
        (corner_world(), Pose(so3_exp([0.0, 0.05, -0.2]), [2.5, 7.0, 1.0])),
        (tilted_world(), Pose(so3_exp([0.05, 0.0, 0.1]), [0.0, 0.0, 0.5])),
        (default_room(), Pose(so3_exp([0.0, 0.0, 0.3]), [0.0, 0.0, 0.0])),
        (default_room(), Pose(so3_exp([0.02, -0.02, 2.0]), [3.0, 8.0, 0.4])),
    ]


SMALL_PATTERN = BeamPattern(n_azimuth=60, elevations_deg=tuple(np.linspace(-25, 15, 8)))


def measured_points(world, pose, spec: LidarNoiseSpec, seed=0, pattern=SMALL_PATTERN,
                    adversarial=False):
    scan = synthesize_scan(pose, world, spec, pattern, rng_seed=seed, adversarial=adversarial)
    return point_noise_ellipsoids(scan.ranges, scan.bearings, spec)
