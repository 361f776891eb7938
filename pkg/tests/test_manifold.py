import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smlio.manifold import (ManifoldError, NearBranchCutError, Pose, Twist, is_rotation,
                            orthonormalize, rotation_between, s2_retract, se3_exp, se3_log,
                            skew, so3_exp, so3_left_jacobian, so3_log, so3_right_jacobian,
                            so3_right_jacobian_inv, tangent_basis_s2, vee)

vec3 = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3).map(np.array)


def test_skew_examples():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.allclose(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])
    assert np.allclose(vee(skew([1, 2, 3])), [1, 2, 3])


def test_exp_examples():
    assert np.allclose(so3_exp(np.zeros(3)), np.eye(3))
    assert np.allclose(so3_exp([math.pi / 2, 0, 0]), [[1, 0, 0], [0, 0, -1], [0, 1, 0]])
    assert np.allclose(so3_exp([0, 0, math.pi]), np.diag([-1, -1, 1]))


def test_log_examples():
    assert np.allclose(so3_log(np.eye(3)), 0)
    assert np.allclose(so3_log(so3_exp([0.3, -0.2, 0.1])), [0.3, -0.2, 0.1])
    c, s = math.cos(1.0), math.sin(1.0)
    assert np.allclose(so3_log([[c, -s, 0], [s, c, 0], [0, 0, 1]]), [0, 0, 1.0])


def test_log_branch_cut():
    with pytest.raises(NearBranchCutError):
        so3_log(so3_exp([0, 0, math.pi]))
    phi = np.array([0.0, 0.0, math.pi - 1e-3])
    assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-9)


def test_right_jacobian_inverse():
    assert np.allclose(so3_right_jacobian_inv(np.zeros(3)), np.eye(3))
    phi = np.array([0.4, -0.7, 1.1])
    assert np.allclose(so3_right_jacobian_inv(phi) @ so3_right_jacobian(phi), np.eye(3))
    with pytest.raises(ManifoldError):
        so3_right_jacobian_inv([0, 0, math.pi])


def test_right_jacobian_finite_difference():
    # Exp(phi + d) ~= Exp(phi) Exp(J_r(phi) d)
    phi = np.array([0.3, -0.5, 0.8])
    J = so3_right_jacobian(phi)
    h = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        num = so3_log(so3_exp(phi).T @ so3_exp(phi + d)) / h
        assert np.allclose(num, J[:, i], atol=1e-5)


def test_se3_exp_examples():
    T = se3_exp(np.zeros(6))
    assert np.allclose(T.matrix(), np.eye(4))
    T = se3_exp(Twist([1, 2, 3], [0, 0, 0]))
    assert np.allclose(T.translation, [1, 2, 3])
    assert np.allclose(T.rotation, np.eye(3))


def test_se3_exp_series_oracle():
    rho, phi = np.array([1.0, 0, 0]), np.array([0, 0, math.pi / 2])
    K = skew(phi)
    V = np.zeros((3, 3))
    term = np.eye(3)
    for j in range(20):
        V += term / math.factorial(j + 1)
        term = term @ K
    T = se3_exp(Twist(rho, phi))
    assert np.allclose(T.translation, V @ rho, atol=1e-12)
    assert np.allclose(so3_left_jacobian(phi), V, atol=1e-12)


def test_tangent_basis_example():
    N = tangent_basis_s2([0, 0, 1])
    assert np.allclose(N[:, 0], [1, 0, 0])
    assert np.allclose(N[:, 1], [0, 1, 0])
    with pytest.raises(ValueError):
        tangent_basis_s2([0, 0, 2])


def test_pose_algebra():
    T = Pose(so3_exp([0.1, 0.2, 0.3]), [1, 2, 3])
    assert np.allclose((T @ T.inverse()).matrix(), np.eye(4))
    p = np.array([0.5, -1, 2])
    assert np.allclose(T.apply(p), T.matrix()[:3, :3] @ p + T.translation)
    T2 = Pose.from_quaternion(T.translation, T.quaternion_xyzw())
    assert np.allclose(T2.rotation, T.rotation)


def test_rotation_between():
    a, b = np.array([1.0, 0, 0]), np.array([0.0, 1.0, 1.0])
    R = rotation_between(a, b)
    assert is_rotation(R)
    assert np.allclose(R @ a, b / np.linalg.norm(b))
    R = rotation_between(a, -a)
    assert np.allclose(R @ a, -a)


@settings(max_examples=100, deadline=None)
@given(vec3)
def test_exp_log_roundtrip(phi):
    phi = phi * 2.0
    if np.linalg.norm(phi) > math.pi - 1e-3:
        return
    R = so3_exp(phi)
    assert is_rotation(R)
    assert np.allclose(so3_log(R), phi, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3)
def test_se3_roundtrip(rho, phi):
    xi = np.concatenate([5 * rho, 2 * phi])
    if np.linalg.norm(xi[3:]) > math.pi - 1e-3:
        return
    assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(vec3, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_s2_basis_and_retract(v, a, b):
    if np.linalg.norm(v) < 1e-3:
        return
    phi = v / np.linalg.norm(v)
    N = tangent_basis_s2(phi)
    assert np.allclose(N.T @ N, np.eye(2), atol=1e-12)
    assert np.allclose(phi @ N, 0, atol=1e-12)
    out = s2_retract(phi, [a, b])
    assert abs(np.linalg.norm(out) - 1) < 1e-12
    # retraction by n moves the direction by exactly |n| radians
    ang = math.atan2(np.linalg.norm(np.cross(phi, out)), out @ phi)
    assert abs(ang - math.hypot(a, b)) < 1e-9


def test_orthonormalize_fixes_drift():
    R = so3_exp([0.2, 0.1, -0.3]) + 1e-6
    assert is_rotation(orthonormalize(R))
