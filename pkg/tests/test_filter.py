import numpy as np
import pytest

from smlio.ellipsoid import PSD_FLOOR
from smlio.filter import (InconsistencyError, LocalMapRecord, NavState, StateBounds, TimingError,
                          maybe_close_local_map, predict, propagate_global, update)
from smlio.manifold import Pose, so3_exp, so3_log
from smlio.registration import IcpUncertainty
from smlio.sensing import ImuNoiseSpec, ImuSample

G = np.array([0, 0, -9.81])
NOISE = ImuNoiseSpec()
BIAS = (np.zeros(3), np.zeros(3))


def state0():
    return NavState(np.array([1.0, 2.0, 0.5]), np.array([0.5, 0.0, 0.0]),
                    so3_exp([0.1, 0.0, 0.3]), 0.0)


def test_predict_small_dt_limit():
    s, b = state0(), StateBounds.from_radii(0.1, 0.1, 0.01)
    imu = ImuSample(0.0, [0.1, 0.2, 9.9], [0.01, 0.02, 0.3])
    for dt in (1e-6, 1e-7):
        s2, b2 = predict(s, b, imu, BIAS, NOISE, dt, G)
        assert np.allclose(s2.translation, s.translation, atol=10 * dt)
        assert np.allclose(s2.rotation, s.rotation, atol=10 * dt)
        for P, P2 in ((b.P_t, b2.P_t), (b.P_v, b2.P_v), (b.P_theta, b2.P_theta)):
            # bounds grow by O(dt) through the square-root trace weights, never shrink
            assert np.trace(P2) >= np.trace(P) - 1e-15
            assert np.allclose(P2, P, atol=1e3 * dt)


def test_predict_kinematics_and_growth():
    s = NavState(np.zeros(3), np.zeros(3), np.eye(3))
    b = StateBounds.at_floor()
    imu = ImuSample(0.0, [0, 0, 9.81], [0, 0, 0])
    for _ in range(100):
        s, b = predict(s, b, imu, BIAS, NOISE, 0.01, G)
    assert np.allclose(s.translation, 0, atol=1e-12) and np.allclose(s.velocity, 0, atol=1e-12)
    assert np.isclose(s.timestamp, 1.0)
    assert np.trace(b.P_v) > np.trace(b.P_t) > 0


def test_predict_timing_error():
    with pytest.raises(TimingError):
        predict(state0(), StateBounds.at_floor(), ImuSample(0, [0, 0, 9.81], [0, 0, 0]),
                BIAS, NOISE, 0.5, G)
    with pytest.raises(TimingError):
        predict(state0(), StateBounds.at_floor(), ImuSample(0, [0, 0, 9.81], [0, 0, 0]),
                BIAS, NOISE, 0.0, G)


def test_update_tight_observation_wins():
    s = state0()
    b = StateBounds.from_radii(5.0, 5.0, 0.5)
    unc = IcpUncertainty(1e-10 * np.eye(6))
    s2, b2, rep = update(s, b, s.pose, unc)
    assert np.allclose(s2.translation, s.translation, atol=1e-8)
    assert np.allclose(s2.rotation, s.rotation, atol=1e-8)
    assert np.trace(b2.P_t) < 1e-8 and np.trace(b2.P_theta) < 1e-8
    assert rep.translation == "applied" and rep.velocity == "no-previous"
    # velocity untouched without a previous observation
    assert np.allclose(b2.P_v, b.P_v)


def test_update_loose_observation_keeps_prediction():
    s = state0()
    b = StateBounds.from_radii(1e-3, 1e-3, 1e-4)
    unc = IcpUncertainty(1e4 * np.eye(6))
    obs = s.pose.retract([0.1, 0, 0, 0, 0, 0.01])
    s2, b2, _ = update(s, b, obs, unc)
    assert np.allclose(b2.P_t, b.P_t, rtol=1e-3)
    assert np.allclose(b2.P_theta, b.P_theta, rtol=1e-3)
    assert np.linalg.norm(s2.translation - s.translation) < 1e-3


def test_update_contains_truth():
    rng = np.random.default_rng(0)
    truth = state0()
    for _ in range(50):
        err_t = rng.uniform(-0.05, 0.05, 3)
        err_th = rng.uniform(-0.005, 0.005, 3)
        pred = NavState(truth.translation - err_t, truth.velocity,
                        truth.rotation @ so3_exp(-err_th))
        b = StateBounds.from_radii(0.05, 0.1, 0.005)
        obs = truth.pose.retract(rng.uniform(-0.01, 0.01, 6) * [1, 1, 1, 0.1, 0.1, 0.1])
        unc = IcpUncertainty(np.diag([3e-4] * 3 + [3e-6] * 3))
        s2, b2, rep = update(pred, b, obs, unc)
        assert not rep.inconsistent
        e = truth.translation - s2.translation
        assert e @ np.linalg.solve(b2.P_t, e) <= 1.0
        a = so3_log(s2.rotation.T @ truth.rotation)
        assert a @ np.linalg.solve(b2.P_theta, a) <= 1.0


def test_velocity_update():
    s = NavState(np.array([1.0, 0, 0]), np.array([0.9, 0, 0]), np.eye(3))
    b = StateBounds.from_radii(0.1, 0.5, 0.01)
    unc = IcpUncertainty(1e-6 * np.eye(6))
    obs = Pose(np.eye(3), [1.0, 0, 0])
    s2, b2, rep = update(s, b, obs, unc, prev_icp=(np.zeros(3), 1e-6 * np.eye(3)), dt=1.0)
    assert rep.velocity == "applied"
    assert np.allclose(s2.velocity, [1.0, 0, 0], atol=1e-3)
    assert np.trace(b2.P_v) < np.trace(b.P_v)


def test_disjoint_policies():
    s = state0()
    b = StateBounds.from_radii(0.01, 0.01, 0.001)
    obs = s.pose.retract([1.0, 0, 0, 0, 0, 0])
    unc = IcpUncertainty(1e-6 * np.eye(6))
    s2, b2, rep = update(s, b, obs, unc, on_disjoint="skip")
    assert rep.translation == "disjoint" and rep.inconsistent
    assert np.allclose(s2.translation, s.translation) and np.allclose(b2.P_t, b.P_t)
    s3, b3, rep = update(s, b, obs, unc, on_disjoint="observe")
    assert rep.translation == "disjoint-observed"
    assert np.allclose(s3.translation, obs.translation)
    with pytest.raises(InconsistencyError):
        update(s, b, obs, unc, on_disjoint="raise")
    with pytest.raises(ValueError):
        update(s, b, obs, unc, on_disjoint="ignore")


def test_global_protection():
    b = StateBounds.from_shapes(np.eye(3), np.eye(3), np.eye(3))
    pl = propagate_global(b, [])
    assert np.array_equal(pl.translation_set.shape, b.P_t)
    rec = LocalMapRecord(0, np.zeros(3), b)
    pl1 = propagate_global(b, [rec])
    assert np.allclose(pl1.translation_set.shape, 4 * np.eye(3))
    traces = [np.trace(propagate_global(b, [rec] * m).translation_set.shape) for m in range(5)]
    assert all(x <= y for x, y in zip(traces, traces[1:]))


def test_local_map_closing():
    b = StateBounds.from_radii(0.1, 0.1, 0.01)
    assert maybe_close_local_map([10, 0, 0], b, np.zeros(3), 50.0) is None
    rec = maybe_close_local_map([51, 0, 0], b, np.zeros(3), 50.0)
    assert rec is not None and rec.bounds is b
    # threshold replay: from the new origin it fires only after another radius
    assert maybe_close_local_map([90, 0, 0], b, [51, 0, 0], 50.0) is None
    rec2 = maybe_close_local_map([102, 0, 0], StateBounds.at_floor(), [51, 0, 0], 50.0, 1)
    assert rec2 is not None
    one = propagate_global(StateBounds.at_floor(), [rec])
    two = propagate_global(StateBounds.at_floor(), [rec, rec2])
    assert np.trace(two.translation_set.shape) >= np.trace(one.translation_set.shape)


def test_bounds_floor():
    b = StateBounds.at_floor()
    assert np.allclose(b.P_t, PSD_FLOOR * np.eye(3))
