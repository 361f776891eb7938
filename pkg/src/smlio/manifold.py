"""SO(3), SE(3) and S^2 primitives.

Conventions: rotations are 3x3 matrices, twists are ordered ``[rho; phi]`` and
poses are perturbed on the right, ``T <- T * Exp(xi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

ANGLE_EPS = 1e-8
BRANCH_EPS = 1e-6


class ManifoldError(ValueError):
    pass


class NearBranchCutError(ManifoldError):
    """Rotation angle too close to pi for a well-defined principal logarithm."""


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def vee(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    """Principal logarithm of a rotation matrix.

    Raises:
        NearBranchCutError: the rotation angle is within 1e-6 of pi.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)
    s = math.sqrt(float(w @ w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if math.pi - theta < BRANCH_EPS:
        raise NearBranchCutError(
            f"rotation angle {theta:.9f} is within {BRANCH_EPS} of pi")
    if theta < ANGLE_EPS:
        return w * (1.0 + theta * theta / 6.0)
    if theta < math.pi - 0.1:
        return (theta / s) * w
    # near pi the antisymmetric part is small; take the axis from R + R^T
    M = 0.5 * (R + R.T) - c * np.eye(3)
    j = int(np.argmax(np.diag(M)))
    axis = M[:, j] / math.sqrt(max(M[j, j], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def so3_right_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (np.eye(3) - (1.0 - math.cos(theta)) / t2 * K
            + (theta - math.sin(theta)) / (t2 * theta) * (K @ K))


def so3_right_jacobian_inv(phi) -> np.ndarray:
    """Inverse of the SO(3) right Jacobian; defined for ||phi|| < pi."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    if theta >= math.pi:
        raise ManifoldError(f"right Jacobian inverse undefined at angle {theta:.6f} >= pi")
    K = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    coef = 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def so3_left_jacobian(phi) -> np.ndarray:
    """V(phi) = sum_j (phi^)^j / (j+1)!, the translation factor of SE(3) Exp."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (np.eye(3) + (1.0 - math.cos(theta)) / t2 * K
            + (theta - math.sin(theta)) / (t2 * theta) * (K @ K))


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Twist:
    """Element of se(3): translational part ``rho`` and rotational part ``phi``."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).reshape(3)
        phi = np.asarray(self.phi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(phi))):
            raise ValueError("twist entries must be finite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping body coordinates into the parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform one point or an (m, 3) stack."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def retract(self, xi) -> "Pose":
        """Right perturbation ``T * Exp(xi)``."""
        return self @ se3_exp(xi)

    def quaternion_xyzw(self) -> np.ndarray:
        return _ScipyRotation.from_matrix(self.rotation).as_quat()

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw) -> "Pose":
        return cls(_ScipyRotation.from_quat(quat_xyzw).as_matrix(), translation)


def se3_exp(xi) -> Pose:
    if isinstance(xi, Twist):
        rho, phi = xi.rho, xi.phi
    else:
        xi = np.asarray(xi, dtype=float).reshape(6)
        rho, phi = xi[:3], xi[3:]
    return Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(T: Pose) -> np.ndarray:
    """Inverse of ``se3_exp``; returns the 6-vector ``[rho; phi]``."""
    phi = so3_log(T.rotation)
    rho = np.linalg.solve(so3_left_jacobian(phi), T.translation)
    return np.concatenate([rho, phi])


def tangent_basis_s2(phi) -> np.ndarray:
    """Orthonormal 3x2 basis of the tangent plane of S^2 at the unit vector ``phi``.

    Gram-Schmidt starts from the canonical axis least aligned with ``phi``
    (smallest absolute component, lowest index on ties) so the result is a
    deterministic function of the input.
    """
    phi = np.asarray(phi, dtype=float).reshape(3)
    if abs(float(np.linalg.norm(phi)) - 1.0) > 1e-6:
        raise ValueError(f"tangent basis needs a unit vector, got norm {np.linalg.norm(phi):.9f}")
    j = int(np.argmin(np.abs(phi)))
    e = np.zeros(3)
    e[j] = 1.0
    n1 = e - (e @ phi) * phi
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(phi, n1)
    return np.column_stack([n1, n2])


def tangent_basis_s2_batch(phis: np.ndarray) -> np.ndarray:
    """Vectorized ``tangent_basis_s2`` for an (m, 3) stack; returns (m, 3, 2)."""
    phis = np.asarray(phis, dtype=float)
    j = np.argmin(np.abs(phis), axis=1)
    e = np.zeros_like(phis)
    e[np.arange(len(phis)), j] = 1.0
    n1 = e - np.sum(e * phis, axis=1, keepdims=True) * phis
    n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
    n2 = np.cross(phis, n1)
    return np.stack([n1, n2], axis=2)


def s2_retract(phi, n) -> np.ndarray:
    """``phi ⊞ n = Exp(N(phi) n) phi`` for a 2-vector tangent perturbation ``n``."""
    N = tangent_basis_s2(phi)
    return so3_exp(N @ np.asarray(n, dtype=float)) @ np.asarray(phi, dtype=float)


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation taking the direction of ``a`` onto the direction of ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    c = float(a @ b)
    if s < 1e-15:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        return so3_exp(math.pi * tangent_basis_s2(a)[:, 0])
    return so3_exp(axis / s * math.atan2(s, c))
