"""Guaranteed ellipsoidal set algebra.

An ellipsoid ``E(a, P) = {x : (x - a)^T P^-1 (x - a) <= 1}`` is the uncertainty
carrier used everywhere in the package. Every operator here returns an *outer*
approximation: the result always contains the exact set it approximates.

The array-level helpers (``minkowski_sum_shapes``, ``intersect_arrays``) skip
object construction and are what the filter uses in its inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

PSD_FLOOR = 1e-12
CONTAINMENT_SLACK = 1e-9
LAMBDA_EPS = 1e-9
LAMBDA_TOL = 1e-8

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EllipsoidError(ValueError):
    """Base class for set-algebra failures."""


class DegenerateShapeError(EllipsoidError):
    """A shape matrix would fall below the positive-definite floor."""


class DisjointSetsError(EllipsoidError):
    """Two sets that were expected to intersect do not."""


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def regularize(P: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Symmetrize ``P`` and lift its smallest eigenvalue to at least ``floor``."""
    P = symmetrize(np.asarray(P, dtype=float))
    d = np.diag(P)
    # Gershgorin: skip the eigen-solve when the floor is already certified
    if np.min(2 * d - np.abs(P).sum(axis=1)) >= floor:
        return P
    lo = np.linalg.eigvalsh(P)[0]
    if lo < floor:
        P = P + (floor - lo) * np.eye(P.shape[0])
    return P


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Ellipsoid with a center vector and a symmetric positive-definite shape."""

    center: np.ndarray
    shape: np.ndarray

    def __init__(self, center, shape, psd_floor: float = PSD_FLOOR):
        c = np.array(center, dtype=float).reshape(-1)
        P = np.array(shape, dtype=float)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        if P.shape != (c.size, c.size):
            raise ValueError(
                f"center has dimension {c.size} but shape is {P.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(P))):
            raise ValueError("ellipsoid parameters must be finite")
        P = symmetrize(P)
        eig = np.linalg.eigvalsh(P)
        # eigvalsh is only accurate to ~eps * ||P||
        tol = 64 * np.finfo(float).eps * max(1.0, float(abs(eig[-1])))
        if eig[0] < psd_floor - tol:
            raise DegenerateShapeError(
                f"shape eigenvalue {eig[0]:.3e} is below the floor {psd_floor:.1e}")
        c.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", P)

    @classmethod
    def _trusted(cls, center: np.ndarray, shape: np.ndarray) -> "Ellipsoid":
        # skips validation; callers guarantee symmetric PD input
        obj = object.__new__(cls)
        object.__setattr__(obj, "center", center)
        object.__setattr__(obj, "shape", shape)
        return obj

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        c = np.asarray(center, dtype=float).reshape(-1)
        return cls(c, radius ** 2 * np.eye(c.size))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def trace(self) -> float:
        return float(np.trace(self.shape))

    def semi_axes(self) -> np.ndarray:
        """Semi-axis lengths, ascending."""
        return np.sqrt(np.clip(np.linalg.eigvalsh(self.shape), 0.0, None))

    def support(self, direction) -> float:
        """Support function h(d) = max_{x in E} d^T x."""
        d = np.asarray(direction, dtype=float)
        return float(d @ self.center + math.sqrt(max(d @ self.shape @ d, 0.0)))

    def quadratic_form(self, x) -> np.ndarray:
        """(x - a)^T P^-1 (x - a) for one point or a stack of points."""
        x = np.asarray(x, dtype=float)
        d = x - self.center
        sol = np.linalg.solve(self.shape, d.T if d.ndim > 1 else d)
        if d.ndim > 1:
            return np.einsum("ij,ji->i", d, sol)
        return float(d @ sol)

    def __repr__(self) -> str:
        return f"Ellipsoid(center={self.center.tolist()}, trace={self.trace:.6g})"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given as one (lower, upper) interval per dimension."""

    intervals: tuple

    def __init__(self, intervals):
        iv = tuple((float(lo), float(hi)) for lo, hi in intervals)
        if not iv:
            raise ValueError("a box needs at least one interval")
        for i, (lo, hi) in enumerate(iv):
            if not lo <= hi:
                raise ValueError(f"interval {i} has lower {lo} > upper {hi}")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def symmetric(cls, radii) -> "Box":
        return cls([(-r, r) for r in np.asarray(radii, dtype=float)])

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.intervals])

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def corners(self) -> np.ndarray:
        lo, hi = self.lower, self.upper
        n = self.dim
        bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        return np.where(bits == 1, hi, lo)


def contains(E: Ellipsoid, x, slack: float = CONTAINMENT_SLACK):
    """Membership test; accepts a single point or an (m, n) stack."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != E.dim:
        raise ValueError(f"point dimension {x.shape[-1]} != ellipsoid dimension {E.dim}")
    q = E.quadratic_form(x)
    return q <= 1.0 + slack


def affine_map(E: Ellipsoid, A, b=None) -> Ellipsoid:
    """Image of ``E`` under ``x -> A x + b`` (exact, no added conservatism)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if n != E.dim:
        raise ValueError(f"map has {n} columns but the ellipsoid has dimension {E.dim}")
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float).reshape(-1)
    if b.size != m:
        raise ValueError(f"offset has length {b.size}, expected {m}")
    if m > n:
        raise DegenerateShapeError(
            f"a {m}x{n} map has singular value 0 in {m - n} output directions")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-12 * max(1.0, sv[0]):
        raise DegenerateShapeError(
            f"map is rank deficient: smallest singular value {sv[-1]:.3e}")
    P = symmetrize(A @ E.shape @ A.T)
    return Ellipsoid(A @ E.center + b, P)


def minkowski_sum_shapes(shapes, floor: float = PSD_FLOOR) -> np.ndarray:
    """Minimum-trace outer shape of a Minkowski sum of zero-centered ellipsoids.

    ``shapes`` is a sequence or an (k, n, n) array of PSD matrices. Operands with
    zero trace are points and contribute nothing. With s_i = sqrt(tr P_i) the
    optimal weights give ``P = (sum s_j) * sum(P_i / s_i)``.
    """
    S = np.asarray(shapes, dtype=float)
    if S.ndim == 2:
        S = S[None]
    if S.shape[0] == 0:
        raise ValueError("Minkowski sum of an empty list")
    tr = np.trace(S, axis1=1, axis2=2)
    keep = tr > 0.0
    if not np.any(keep):
        return regularize(np.zeros(S.shape[1:]), floor)
    s = np.sqrt(tr[keep])
    P = s.sum() * np.tensordot(1.0 / s, S[keep], axes=1)
    return regularize(P, floor)


def minkowski_sum_outer(operands: Sequence[Ellipsoid],
                        floor: float = PSD_FLOOR) -> Ellipsoid:
    """Minimum-trace outer ellipsoid of the Minkowski sum of ``operands``."""
    if len(operands) == 0:
        raise ValueError("Minkowski sum of an empty list")
    dim = operands[0].dim
    for i, E in enumerate(operands):
        if E.dim != dim:
            raise ValueError(f"operand {i} has dimension {E.dim}, expected {dim}")
    if len(operands) == 1:
        return operands[0]
    center = np.sum([E.center for E in operands], axis=0)
    P = minkowski_sum_shapes([E.shape for E in operands], floor)
    return Ellipsoid(center, P)


class _FusionTrace:
    """tr(P(lambda)) for the intersection family, in a simultaneously diagonal basis.

    With V from the generalized eigenproblem W2 V = W1 V diag(mu), where W = P^-1,
    every member of the family is diagonal and evaluating it costs O(n).
    """

    def __init__(self, a1, P1, a2, P2):
        W1 = np.linalg.inv(P1)
        W2 = np.linalg.inv(P2)
        W1 = symmetrize(W1)
        W2 = symmetrize(W2)
        mu, V = scipy.linalg.eigh(W2, W1)
        self.mu = mu
        self.V = V
        self.col2 = np.einsum("ij,ij->j", V, V)
        self.c1 = V.T @ (W1 @ a1)
        self.c2 = V.T @ (W2 @ a2)
        self.k1 = float(a1 @ W1 @ a1)
        self.k2 = float(a2 @ W2 @ a2)

    def parts(self, lam: float):
        d = (1.0 - lam) + lam * self.mu
        y = (1.0 - lam) * self.c1 + lam * self.c2
        nu = (1.0 - lam) * self.k1 + lam * self.k2 - float(np.sum(y * y / d))
        return d, y, nu

    def __call__(self, lam: float) -> float:
        d, _, nu = self.parts(lam)
        return (1.0 - nu) * float(np.sum(self.col2 / d))

    def result(self, lam: float):
        d, y, nu = self.parts(lam)
        center = self.V @ (y / d)
        P_lam = (self.V / d) @ self.V.T
        return center, (1.0 - nu) * P_lam, nu


def golden_section(f, lo: float, hi: float, tol: float = LAMBDA_TOL) -> float:
    """Minimizer of a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def intersect_arrays(a1, P1, a2, P2, *, lam_tol: float = LAMBDA_TOL,
                     lam_eps: float = LAMBDA_EPS, floor: float = PSD_FLOOR,
                     grid_check: int = 0):
    """Minimum-trace outer ellipsoid of E(a1, P1) ∩ E(a2, P2) on raw arrays.

    Returns ``(center, shape, lam)``. ``grid_check > 0`` additionally scans that
    many evenly spaced lambda values and keeps the better of the two answers,
    which guards against a non-unimodal trace profile.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    fam = _FusionTrace(a1, P1, a2, P2)
    lam = golden_section(fam, lam_eps, 1.0 - lam_eps, lam_tol)
    if grid_check:
        grid = np.linspace(lam_eps, 1.0 - lam_eps, grid_check)
        vals = [fam(g) for g in grid]
        j = int(np.argmin(vals))
        if vals[j] < fam(lam):
            lam = float(grid[j])
    center, P, nu = fam.result(lam)
    if nu >= 1.0:
        raise DisjointSetsError(
            f"sets do not intersect (nu = {nu:.6g} at lambda = {lam:.6g})")
    return center, regularize(P, floor), lam


def intersect_outer(E1: Ellipsoid, E2: Ellipsoid, *, lam_tol: float = LAMBDA_TOL,
                    floor: float = PSD_FLOOR, grid_check: int = 0) -> Ellipsoid:
    """Minimum-trace outer ellipsoid of the intersection of two ellipsoids.

    Raises:
        DisjointSetsError: the two operands have an empty intersection.
    """
    if E1.dim != E2.dim:
        raise ValueError(f"dimension mismatch: {E1.dim} vs {E2.dim}")
    center, P, _ = intersect_arrays(E1.center, E1.shape, E2.center, E2.shape,
                                    lam_tol=lam_tol, floor=floor,
                                    grid_check=grid_check)
    return Ellipsoid(center, P)


def intersection_trace(E1: Ellipsoid, E2: Ellipsoid, lam: float) -> float:
    """Trace of the family member at ``lam``; exposed for diagnostics."""
    return _FusionTrace(E1.center, E1.shape, E2.center, E2.shape)(lam)


def box_to_ellipsoid(B: Box, floor: float = PSD_FLOOR) -> Ellipsoid:
    """Outer ellipsoid of a box: midpoint center and ``diag(n r_i^2)`` shape."""
    lo, hi = B.lower, B.upper
    center = 0.5 * (lo + hi)
    r = hi - center
    r = np.where(r > 0.0, r, math.sqrt(floor))
    return Ellipsoid(center, np.diag(B.dim * r ** 2))
