import math

import numpy as np
import pytest

from smlio.manifold import so3_exp
from smlio.sensing import (Extrinsics, ImuNoiseSpec, ImuSample, InitializationError,
                           LidarNoiseSpec, PointMeasurement, Scan, point_noise_ellipsoid,
                           point_noise_ellipsoids, static_initialize)
from smlio.simulation import TrajectorySpec, simulate_trajectory, synthesize_imu


def test_point_shape_eigenvalues():
    m = PointMeasurement(10.0, [1, 0, 0])
    p, P = point_noise_ellipsoid(m, LidarNoiseSpec(0.05, 0.01))
    assert np.allclose(p, [10, 0, 0])
    assert np.allclose(np.linalg.eigvalsh(P), [0.0075, 0.03, 0.03])
    # the thin axis points along the beam
    assert np.isclose(P[0, 0], 0.0075)


def test_identity_extrinsics_point():
    m = PointMeasurement(3.0, np.array([1, 2, 2]) / 3.0)
    p, _ = point_noise_ellipsoid(m, LidarNoiseSpec())
    assert np.allclose(p, [1, 2, 2])


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(20, 3))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    d = rng.uniform(1, 30, 20)
    ext = Extrinsics(so3_exp([0.1, -0.2, 0.3]), [0.1, 0.2, 0.3])
    spec = LidarNoiseSpec(0.03, 0.002)
    pts, shapes = point_noise_ellipsoids(d, b, spec, ext)
    for i in range(20):
        p, P = point_noise_ellipsoid(PointMeasurement(d[i], b[i]), spec, ext)
        assert np.allclose(pts[i], p)
        assert np.allclose(shapes[i], P, atol=1e-11)


def test_point_shape_contains_true_point():
    # perturb range and bearing to the corners of their bounds; the true point stays inside
    spec = LidarNoiseSpec(0.08, math.radians(0.5))
    d, phi = 12.0, np.array([0.6, 0.0, 0.8])
    p, P = point_noise_ellipsoid(PointMeasurement(d, phi), spec)
    Pi = np.linalg.inv(P)
    rng = np.random.default_rng(2)
    for _ in range(2000):
        nd = rng.choice([-1, 1]) * spec.b_r
        ax = rng.normal(size=3)
        ax -= (ax @ phi) * phi
        ax *= spec.b_phi / np.linalg.norm(ax)
        true = (d + nd) * (so3_exp(ax) @ phi)
        e = true - p
        assert e @ Pi @ e <= 1.0 + 1e-9


def test_validation():
    with pytest.raises(ValueError):
        PointMeasurement(-1.0, [1, 0, 0])
    with pytest.raises(ValueError):
        PointMeasurement(1.0, [1, 1, 0])
    with pytest.raises(ValueError):
        LidarNoiseSpec(-0.1, 0.0)
    with pytest.raises(ValueError):
        ImuNoiseSpec(b_a=-1.0)
    with pytest.raises(ValueError):
        Extrinsics(2 * np.eye(3))


def test_scan_from_points_roundtrip():
    xyz = np.array([[1.0, 2.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 4.0]])
    s = Scan.from_points(1.5, xyz)
    assert len(s) == 2
    assert np.allclose(s.ranges, [3, 5])
    assert np.allclose(s.points(), xyz[[0, 2]])


def still(n, accel=(0, 0, 9.81), gyro=(0, 0, 0)):
    return [ImuSample(k / 200, accel, gyro) for k in range(n)]


def test_static_init_level():
    b_a, b_g, g, R0 = static_initialize(still(300))
    assert np.allclose(b_a, 0) and np.allclose(b_g, 0)
    assert np.allclose(R0, np.eye(3))
    assert np.allclose(g, [0, 0, -9.81])


def test_static_init_gyro_bias():
    _, b_g, _, _ = static_initialize(still(300, gyro=(0.01, 0, 0)))
    assert np.allclose(b_g, [0.01, 0, 0])


def test_static_init_simulated_biases():
    spec = ImuNoiseSpec()
    truth = simulate_trajectory(TrajectorySpec("stationary", duration=2.0))
    bias_a, bias_g = np.array([0.004, -0.003, 0.002]), np.array([0.002, -0.001, 0.0015])
    imu = synthesize_imu(truth, (bias_a, bias_g), spec, rng_seed=4)
    b_a, b_g, _, R0 = static_initialize(imu)
    # bias estimates land inside the declared bias-error boxes (0.1 of the noise bound)
    assert np.all(np.abs(b_a - R0.T @ R0 @ bias_a) <= 0.1 * spec.b_a)
    assert np.all(np.abs(b_g - bias_g) <= 0.1 * spec.b_g)


def test_static_init_rejects_motion_and_short_windows():
    with pytest.raises(InitializationError, match="needs 200"):
        static_initialize(still(50))
    moving = [ImuSample(k / 200, (0, 0, 9.81 + (3 if k % 2 else -3)), (0, 0, 0)) for k in range(300)]
    with pytest.raises(InitializationError, match="variance"):
        static_initialize(moving)
