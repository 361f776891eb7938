"""World-frame point map with nearest-neighbour plane queries.

The map is a voxel-downsampled point set backed by a k-d tree. It is a plain
union of local maps; starting a new local map only moves the origin used to
decide when the next one begins.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MapParams:
    k: int = 5
    max_corr_dist: float = 1.0
    plane_tol: float = 0.05
    voxel_size: float = 0.5
    local_map_radius: float = 50.0

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("plane fitting needs k >= 3 neighbours")
        for name in ("max_corr_dist", "plane_tol", "voxel_size", "local_map_radius"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    anchor: np.ndarray
    rms_distance: float
    neighbor_count: int


class ReadWriteLock:
    """Many concurrent readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


_KEY_OFFSET = 1 << 20


def _voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    idx = np.floor(points / voxel).astype(np.int64) + _KEY_OFFSET
    return (idx[:, 0] << 42) | (idx[:, 1] << 21) | idx[:, 2]


def _smallest_eigpairs(S: np.ndarray):
    """Smallest eigenvalue and unit eigenvector of a stack of symmetric 3x3 matrices.

    Closed-form (trigonometric) eigenvalue plus a cross-product eigenvector;
    stacked ``eigh`` is used only for the rows where that is ill-conditioned.
    """
    q = np.trace(S, axis1=1, axis2=2) / 3.0
    p1 = S[:, 0, 1] ** 2 + S[:, 0, 2] ** 2 + S[:, 1, 2] ** 2
    p2 = ((S[:, 0, 0] - q) ** 2 + (S[:, 1, 1] - q) ** 2 + (S[:, 2, 2] - q) ** 2 + 2 * p1)
    p = np.sqrt(p2 / 6.0)
    I = np.eye(3)
    safe = np.where(p > 0.0, p, 1.0)
    B = (S - q[:, None, None] * I) / safe[:, None, None]
    det = (B[:, 0, 0] * (B[:, 1, 1] * B[:, 2, 2] - B[:, 1, 2] * B[:, 2, 1])
           - B[:, 0, 1] * (B[:, 1, 0] * B[:, 2, 2] - B[:, 1, 2] * B[:, 2, 0])
           + B[:, 0, 2] * (B[:, 1, 0] * B[:, 2, 1] - B[:, 1, 1] * B[:, 2, 0]))
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam = np.where(p > 0.0, q + 2 * p * np.cos(phi + 2 * np.pi / 3), q)
    M = S - lam[:, None, None] * I
    cands = np.stack([np.cross(M[:, 0], M[:, 1]), np.cross(M[:, 0], M[:, 2]),
                      np.cross(M[:, 1], M[:, 2])], axis=1)
    norms = np.linalg.norm(cands, axis=2)
    best = np.argmax(norms, axis=1)
    rows = np.arange(S.shape[0])
    v = cands[rows, best]
    vn = norms[rows, best]
    scale = np.maximum(np.abs(S).max(axis=(1, 2)), 1e-300)
    bad = vn <= 1e-6 * scale ** 2
    v = v / np.where(bad, 1.0, vn)[:, None]
    if np.any(bad):
        w, V = np.linalg.eigh(S[bad])
        lam[bad] = w[:, 0]
        v[bad] = V[:, :, 0]
    # the Rayleigh quotient is accurate to second order in the vector error
    lam = np.einsum("mi,mij,mj->m", v, S, v)
    return np.clip(lam, 0.0, None), v


def fit_planes(neighbors: np.ndarray):
    """Least-squares planes for a batch of neighbour sets, shape (m, k, 3).

    Returns ``(normals, centroids, rms)`` where the normal is the eigenvector of
    the smallest scatter eigenvalue and rms is the RMS point-plane distance.
    """
    centroids = neighbors.mean(axis=1)
    d = neighbors - centroids[:, None, :]
    scatter = np.swapaxes(d, 1, 2) @ d
    lam, normals = _smallest_eigpairs(scatter)
    rms = np.sqrt(lam / neighbors.shape[1])
    return normals, centroids, rms


class PointMap:
    """Voxel-downsampled world-frame point map (the ``MapHandle``)."""

    def __init__(self, params: MapParams | None = None, origin=None):
        self.params = params or MapParams()
        self._points = np.empty((0, 3))
        self._keys = np.empty(0, dtype=np.int64)   # sorted voxel keys
        self._tree: cKDTree | None = None
        self.origin = np.zeros(3) if origin is None else np.asarray(origin, float).copy()
        self.lock = ReadWriteLock()
        self._fit_cache = None   # (neighbour indices, normals, centroids, rms)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    def _index(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._points)
        return self._tree

    def insert_scan(self, points_W, voxel_size: float | None = None) -> int:
        """Downsample (first point per voxel wins) and add new voxels to the map."""
        voxel = self.params.voxel_size if voxel_size is None else voxel_size
        pts = np.asarray(points_W, dtype=float).reshape(-1, 3)
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if pts.size == 0:
            return 0
        keys = _voxel_keys(pts, voxel)
        uniq, first = np.unique(keys, return_index=True)
        fresh = ~np.isin(uniq, self._keys, assume_unique=True)
        if not np.any(fresh):
            return 0
        order = np.sort(first[fresh])            # keep arrival order
        with self.lock.write():
            self._points = np.vstack([self._points, pts[order]])
            self._keys = np.union1d(self._keys, uniq[fresh])
            self._tree = None
            self._fit_cache = None
        return int(order.size)

    def start_new_local_map(self, origin) -> None:
        self.origin = np.asarray(origin, dtype=float).copy()

    def distance_from_origin(self, position) -> float:
        return float(np.linalg.norm(np.asarray(position, dtype=float) - self.origin))

    def knn(self, query, k: int):
        """Exact k nearest neighbours; equal distances resolve by insertion order."""
        q = np.asarray(query, dtype=float).reshape(3)
        n = len(self)
        if n == 0:
            raise ValueError("query on an empty map")
        k = min(k, n)
        with self.lock.read():
            tree = self._index()
            kk = min(n, k + 4)
            dist, idx = tree.query(q, k=kk)
            dist = np.atleast_1d(dist)
            idx = np.atleast_1d(idx)
            if kk < n and dist[k - 1] == dist[-1]:
                # tie extends past what was fetched; gather the whole shell
                idx = np.array(tree.query_ball_point(q, dist[k - 1] * (1 + 1e-12)))
                dist = np.linalg.norm(self._points[idx] - q, axis=1)
            order = np.lexsort((idx, dist))[:k]
        return dist[order], idx[order]

    def query_plane(self, p_W, params: MapParams | None = None) -> PlaneFit | None:
        params = params or self.params
        if len(self) < params.k:
            return None
        dist, idx = self.knn(p_W, params.k)
        if dist[-1] > params.max_corr_dist:
            return None
        nb = self._points[idx][None]
        normals, centroids, rms = fit_planes(nb)
        if not rms[0] < params.plane_tol:
            return None
        n = normals[0]
        if n @ (np.asarray(p_W, float) - centroids[0]) < 0.0:
            n = -n
        return PlaneFit(n, centroids[0], float(rms[0]), params.k)

    def query_planes(self, points_W, params: MapParams | None = None):
        """Batched plane query.

        Returns ``(valid, normals, anchors)``; rows with ``valid == False`` have
        no acceptable plane.
        """
        params = params or self.params
        pts = np.asarray(points_W, dtype=float).reshape(-1, 3)
        m = pts.shape[0]
        valid = np.zeros(m, dtype=bool)
        normals = np.zeros((m, 3))
        anchors = np.zeros((m, 3))
        if len(self) < params.k:
            return valid, normals, anchors
        with self.lock.read():
            dist, idx = self._index().query(pts, k=params.k,
                                            distance_upper_bound=params.max_corr_dist,
                                            workers=-1)
            found = np.all(np.isfinite(dist), axis=1)
            if not np.any(found):
                return valid, normals, anchors
            n, c, rms = self._fit_cached(idx, found)
        ok = rms < params.plane_tol
        side = np.sum(n * (pts[found] - c), axis=1) < 0.0
        n[side] *= -1.0
        rows = np.flatnonzero(found)[ok]
        valid[rows] = True
        normals[rows] = n[ok]
        anchors[rows] = c[ok]
        return valid, normals, anchors

    def _fit_cached(self, idx, found):
        """Plane fits, reusing rows whose neighbour set matches the previous query.

        A fit depends only on its neighbour indices, so Gauss-Newton iterations
        that re-query the same scan mostly hit the cache.
        """
        cache = self._fit_cache
        if cache is not None and cache[0].shape == idx.shape:
            same = found & np.all(cache[0] == idx, axis=1) & cache[4]
            todo = found & ~same
        else:
            same = np.zeros(idx.shape[0], dtype=bool)
            todo = found
        normals = np.zeros((idx.shape[0], 3))
        cents = np.zeros((idx.shape[0], 3))
        rms = np.zeros(idx.shape[0])
        if np.any(same):
            normals[same], cents[same], rms[same] = cache[1][same], cache[2][same], cache[3][same]
        if np.any(todo):
            normals[todo], cents[todo], rms[todo] = fit_planes(self._points[idx[todo]])
        self._fit_cache = (idx, normals, cents, rms, found)
        return normals[found], cents[found], rms[found]

    def export_xyz(self, path) -> None:
        np.savetxt(Path(path), self._points, fmt="%.6f")

    @staticmethod
    def load_xyz(path) -> np.ndarray:
        return np.loadtxt(Path(path), ndmin=2)
