"""Outer-bounding ellipsoids: sum, intersection and box conversion.

Run: python3 demos/set_algebra.py
"""

import numpy as np

from smlio.ellipsoid import (Box, Ellipsoid, box_to_ellipsoid, contains, intersect_outer,
                             minkowski_sum_outer)

rng = np.random.default_rng(0)

# two error sources: a stretched position error and a small round one
A = Ellipsoid([0.0, 0.0], np.diag([4.0, 0.25]))
B = Ellipsoid([1.0, 0.0], 0.5 * np.eye(2))

S = minkowski_sum_outer([A, B])
print("sum centre", S.center, "trace", round(np.trace(S.shape), 4))


def draw(E, n):
    """Uniform samples from the volume of E."""
    d = rng.normal(size=(n, E.dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0, 1, n) ** (1 / E.dim)
    return E.center + (d * r[:, None]) @ np.linalg.cholesky(E.shape).T


pairs = draw(A, 20000) + draw(B, 20000)
print("sum contains every a + b:", bool(np.all(contains(S, pairs))))

# fusing two overlapping estimates shrinks the set
I = intersect_outer(A, B)
print("intersection centre", np.round(I.center, 4), "trace", round(np.trace(I.shape), 4),
      "<", round(min(np.trace(A.shape), np.trace(B.shape)), 4))

# uniform box noise becomes its bounding ellipsoid E(c, n diag(half widths^2))
box = Box([(-0.1, 0.1), (-0.2, 0.2), (-0.05, 0.05)])
E = box_to_ellipsoid(box)
print("box corners inside:", bool(np.all(contains(E, box.corners()))))
