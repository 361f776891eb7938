"""Scan-to-map point-to-plane ICP on SE(3) and its bounded-error uncertainty.

The pose is parameterized with a right perturbation, ``T <- T Exp(dxi)`` with
``dxi = [rho; phi]``. For a converged registration the increment is an implicit
function of the scan points, and its Jacobian with respect to each point maps
the per-point noise ellipsoids into a bound on the pose increment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .ellipsoid import PSD_FLOOR, minkowski_sum_shapes
from .manifold import Pose, Twist, se3_exp


class RegistrationError(RuntimeError):
    pass


class DegenerateRegistrationError(RegistrationError):
    """Too few point-to-plane correspondences."""


class IllConditionedError(RegistrationError):
    """The Gauss-Newton normal matrix is (numerically) singular."""


class PlaneSource(Protocol):
    def query_planes(self, points_W): ...


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 30
    converge_tol: float = 1e-6
    min_correspondences: int = 10
    cond_max: float = 1e8
    max_halvings: int = 4
    gate_tol: float = 1e-3
    refresh_tol: float = 1e-3
    trim_factor: float = np.inf
    trim_floor: float = 0.0
    min_normal_spread: float = 0.1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.converge_tol > 0.0:
            raise ValueError("converge_tol must be positive")
        if self.min_correspondences < 6:
            raise ValueError("min_correspondences must be at least 6")
        if not 0.0 <= self.min_normal_spread < 1.0 / 3.0:
            raise ValueError("min_normal_spread must lie in [0, 1/3)")


@dataclass(frozen=True)
class Correspondence:
    point_I: np.ndarray
    point_shape_I: np.ndarray
    normal_W: np.ndarray
    anchor_W: np.ndarray


@dataclass(frozen=True)
class IcpResult:
    """Final pose and the correspondence set of the last iteration (as arrays)."""

    pose: Pose
    points_I: np.ndarray
    shapes_I: np.ndarray
    normals_W: np.ndarray
    anchors_W: np.ndarray
    last_increment: Twist
    iterations: int
    converged: bool

    @property
    def correspondences(self) -> list[Correspondence]:
        return [Correspondence(p, P, u, q) for p, P, u, q in
                zip(self.points_I, self.shapes_I, self.normals_W, self.anchors_W)]

    def __len__(self) -> int:
        return self.points_I.shape[0]


@dataclass(frozen=True)
class IcpUncertainty:
    """Shape of the ellipsoid bounding the pose increment, ordered [rho; phi]."""

    shape_xi: np.ndarray

    @property
    def translation_shape(self) -> np.ndarray:
        return self.shape_xi[:3, :3]

    @property
    def rotation_shape(self) -> np.ndarray:
        return self.shape_xi[3:, 3:]


def _residual_jacobian(pose: Pose, points, normals):
    """Rows [u^T R, -u^T R p^] of the linearized residual."""
    b = normals @ pose.rotation
    return np.hstack([b, np.cross(points, b)])


def _residuals(pose: Pose, points, normals, anchors) -> np.ndarray:
    return np.einsum("ij,ij->i", normals, pose.apply(points) - anchors)


def gauss_newton_step(pose: Pose, points, normals, anchors, cond_max: float = np.inf):
    """One Gauss-Newton increment for fixed correspondences.

    Returns ``(dxi, H, g)`` with ``H = J^T J`` and ``g = J^T r``.
    """
    J = _residual_jacobian(pose, points, normals)
    r = _residuals(pose, points, normals, anchors)
    H = J.T @ J
    g = J.T @ r
    w = np.linalg.eigvalsh(H)
    if w[0] <= 0.0 or w[-1] / w[0] > cond_max:
        cond = np.inf if w[0] <= 0.0 else w[-1] / w[0]
        raise IllConditionedError(f"normal matrix condition number {cond:.3e} exceeds {cond_max:.1e}")
    return -np.linalg.solve(H, g), H, g


def _match(source: PlaneSource, pose: Pose, points, shapes, params: IcpParams, trim: bool):
    """Query planes for every point; optionally trim large point-plane residuals.

    With a finite ``trim_factor`` a match is kept only if its residual is below
    ``max(trim_floor, trim_factor * median)``, which sheds matches to the wrong
    surface as the pose converges.
    """
    min_corr = params.min_correspondences
    pw = pose.apply(points)
    valid, normals, anchors = source.query_planes(pw)
    if trim and np.any(valid):
        r = np.abs(np.einsum("ij,ij->i", normals[valid], pw[valid] - anchors[valid]))
        gate = max(params.trim_floor, params.trim_factor * float(np.median(r)))
        keep = np.flatnonzero(valid)[r > gate]
        valid[keep] = False
    n = int(np.count_nonzero(valid))
    if n < min_corr:
        raise DegenerateRegistrationError(
            f"only {n} point-to-plane correspondences (need {min_corr})")
    return points[valid], shapes[valid], normals[valid], anchors[valid]


def icp_point_to_plane(points_I, shapes_I, source: PlaneSource, initial: Pose,
                       params: IcpParams | None = None) -> IcpResult:
    """Gauss-Newton point-to-plane registration with per-iteration re-matching.

    Correspondences are refreshed every iteration until the increment drops
    below ``params.refresh_tol``; from then on they are frozen and the
    iteration runs to ``converge_tol`` on that set, so the returned pose is the
    exact optimum of the returned correspondences. With a finite
    ``trim_factor`` trimmed rounds replace the frozen stage: each round
    re-matches with residual trimming at the current pose and solves that set
    to ``converge_tol``, until the pose is already optimal for a fresh match. Trimming
    removes matches to the wrong surface, which matters only for near-noiseless
    data. A step that raises the cost is halved up to ``params.max_halvings``
    times.

    Raises:
        DegenerateRegistrationError: fewer than ``min_correspondences`` matches.
        IllConditionedError: the normal matrix exceeds ``cond_max``, or the
            matched normals leave a translation direction unconstrained.
    """
    params = params or IcpParams()
    points_I = np.asarray(points_I, dtype=float).reshape(-1, 3)
    shapes_I = np.asarray(shapes_I, dtype=float).reshape(-1, 3, 3)
    if points_I.shape[0] == 0:
        raise DegenerateRegistrationError("empty scan")
    pose = initial
    converged = False
    trim_enabled = bool(np.isfinite(params.trim_factor))
    stage = "refresh"   # then "frozen", or "trim" when trimming is enabled
    rematch = True
    dxi = np.zeros(6)
    it = 0
    corr = None
    while it < params.max_iterations:
        it += 1
        fresh = rematch
        if rematch:
            corr = _match(source, pose, points_I, shapes_I, params, stage == "trim")
            rematch = stage == "refresh"
        p, _, u, q = corr
        dxi, _, _ = gauss_newton_step(pose, p, u, q, params.cond_max)
        norm = np.linalg.norm(dxi)
        if norm < params.converge_tol:
            pose = pose.retract(dxi)
            if trim_enabled and not (stage == "trim" and fresh):
                # trimmed rounds end once the pose is optimal for a fresh trimmed match
                stage = "trim"
                rematch = True
                continue
            converged = True
            break
        if stage == "refresh" and norm < params.refresh_tol:
            stage = "trim" if trim_enabled else "frozen"
            rematch = trim_enabled
        cost0 = float(np.sum(_residuals(pose, p, u, q) ** 2))
        step = dxi
        for _ in range(params.max_halvings + 1):
            cand = pose.retract(step)
            if np.sum(_residuals(cand, p, u, q) ** 2) <= cost0:
                pose = cand
                break
            step = 0.5 * step
        else:
            # no descent along the GN direction: stuck at the numerical optimum
            break
        dxi = step
    p, P, u, q = corr
    check_normal_spread(u, params.min_normal_spread)
    return IcpResult(pose, p, P, u, q, Twist.from_vector(dxi), it, converged)


def check_normal_spread(normals, min_spread: float) -> float:
    """Smallest eigenvalue of the mean normal scatter ``sum(u u^T) / n``.

    It is the translation block of the normal matrix per correspondence. Noisy
    map normals keep a single-plane scene numerically well conditioned, yet its
    in-plane translation is fixed only by noise; a small spread exposes that.
    """
    u = np.asarray(normals, dtype=float)
    spread = float(np.linalg.eigvalsh(u.T @ u / u.shape[0])[0])
    if spread < min_spread:
        raise IllConditionedError(
            f"matched normals leave translation weakly constrained "
            f"(spread {spread:.3g} < {min_spread:.3g})")
    return spread


def solve_fixed(points, normals, anchors, initial: Pose, tol: float = 1e-13,
                max_iterations: int = 50) -> Pose:
    """Iterate Gauss-Newton to full convergence on a fixed correspondence set."""
    pose = initial
    for _ in range(max_iterations):
        dxi, _, _ = gauss_newton_step(pose, points, normals, anchors)
        pose = pose.retract(dxi)
        if np.linalg.norm(dxi) < tol:
            break
    return pose


def _batch_skew(v: np.ndarray) -> np.ndarray:
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def point_jacobians(pose: Pose, points, normals, anchors) -> np.ndarray:
    """d(increment)/d(point) for every correspondence, shape (n, 6, 3).

    Evaluated at the converged pose with a zero increment:
    ``-H^-1 [B^T B ; p^ B^T B - (B^T B p)^ - (B^T u^T (t - q))^]``
    with ``B = u^T R``.
    """
    points = np.asarray(points, dtype=float)
    b = normals @ pose.rotation                           # rows B_i
    J = np.hstack([b, np.cross(points, b)])
    H = J.T @ J
    M = b[:, :, None] * b[:, None, :]                     # B^T B
    Mp = b * np.einsum("ij,ij->i", b, points)[:, None]
    s = np.einsum("ij,ij->i", normals, pose.translation - anchors)
    lower = (np.einsum("nij,njk->nik", _batch_skew(points), M)
             - _batch_skew(Mp) - _batch_skew(b * s[:, None]))
    C = np.concatenate([M, lower], axis=1)                # (n, 6, 3)
    Hinv = np.linalg.inv(H)
    return -np.einsum("ij,njk->nik", Hinv, C)


def resolve_icp_uncertainty(result: IcpResult, p_nl, nl_mode: str = "per_point",
                            floor: float = PSD_FLOOR) -> IcpUncertainty:
    """Bound the pose increment of a converged registration.

    Each point's noise shape is pushed through its implicit-function Jacobian,
    the images are combined with the minimum-trace Minkowski sum, and the
    higher-order remainder is covered by ``p_nl``, added once per point
    (``nl_mode="per_point"``) or once overall (``"single"``).
    """
    if not result.converged:
        raise ValueError("uncertainty resolving needs a converged registration")
    if nl_mode not in ("per_point", "single"):
        raise ValueError(f"unknown nl_mode {nl_mode!r}")
    Jp = point_jacobians(result.pose, result.points_I, result.normals_W, result.anchors_W)
    shapes = np.einsum("nij,njk,nlk->nil", Jp, result.shapes_I, Jp)
    Q_points = minkowski_sum_shapes(shapes, floor)
    p_nl = np.asarray(p_nl, dtype=float)
    n = len(result) if nl_mode == "per_point" else 1
    # n identical operands: weights 1/n each, so the sum is n^2 * P
    Q_nl = float(n) ** 2 * p_nl
    Q = minkowski_sum_shapes(np.stack([Q_points, Q_nl]), floor)
    return IcpUncertainty(Q)


def gate_icp(result: IcpResult, gate_tol: float) -> bool:
    """Accept a registration only if it converged with a small final increment."""
    return bool(result.converged and result.last_increment.norm() <= gate_tol)
