"""Dataset and result file formats.

imu.csv              ``t,ax,ay,az,gx,gy,gz`` with 9 significant digits
scans/NNNNNN.csv     ``t,range,bx,by,bz`` in the LiDAR frame (``x,y,z`` accepted)
ground_truth.tum     ``t tx ty tz qx qy qz qw``
protection.csv       ``t,p11,p12,p13,p22,p23,p33`` (upper triangle)
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .manifold import Pose
from .sensing import ImuSample, Scan

IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
SCAN_HEADER = ["t", "range", "bx", "by", "bz"]
PROTECTION_HEADER = ["t", "p11", "p12", "p13", "p22", "p23", "p33"]
TIMING_HEADER = ["t", "icp", "uncertainty", "filter", "map", "total"]
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class DataError(ValueError):
    """A data file is missing or malformed; the message names the path and row."""


def _require(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    return path


def _fmt_rows(rows: np.ndarray, digits: int) -> str:
    f = f"%.{digits}g"
    return "".join(",".join(f % v for v in row) + "\n" for row in rows)


def _read_csv(path, header: Sequence[str]) -> np.ndarray:
    """Parse a numeric CSV with an exact header; errors name the file row."""
    path = _require(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in got] != list(header):
            raise DataError(f"{path}: row 1: expected header {','.join(header)!r}, "
                            f"got {','.join(got)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno}: expected {len(header)} fields, "
                                f"got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric field in {row!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: row {lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_imu_csv(path, samples: Iterable[ImuSample]) -> None:
    rows = np.array([[s.timestamp, *s.accel, *s.gyro] for s in samples]).reshape(-1, 7)
    Path(path).write_text(",".join(IMU_HEADER) + "\n" + _fmt_rows(rows, 9))


def read_imu_csv(path) -> list[ImuSample]:
    data = _read_csv(path, IMU_HEADER)
    if np.any(np.diff(data[:, 0]) <= 0.0):
        raise DataError(f"{path}: timestamps are not strictly increasing")
    return [ImuSample(r[0], r[1:4], r[4:7]) for r in data]


def write_scan_csv(path, scan: Scan) -> None:
    rows = np.column_stack([np.full(len(scan), scan.timestamp), scan.ranges, scan.bearings])
    Path(path).write_text(",".join(SCAN_HEADER) + "\n" + _fmt_rows(rows, 12))


def read_scan_csv(path, timestamp: float | None = None) -> Scan:
    """Read a range-bearing scan, or convert an ``x,y,z`` / ``t,x,y,z`` cloud."""
    path = _require(path)
    with open(path) as fh:
        first = fh.readline().strip().replace(" ", "")
    if first in ("x,y,z", "t,x,y,z"):
        cols = first.split(",")
        data = _read_csv(path, cols)
        if cols[0] == "t":
            t = float(data[0, 0]) if data.size else (timestamp or 0.0)
            xyz = data[:, 1:]
        else:
            if timestamp is None:
                raise DataError(f"{path}: x,y,z cloud needs an explicit timestamp")
            t, xyz = timestamp, data
        return Scan.from_points(t, xyz)
    data = _read_csv(path, SCAN_HEADER)
    if data.shape[0] == 0:
        return Scan(0.0 if timestamp is None else timestamp, np.empty(0), np.empty((0, 3)))
    if np.any(data[:, 1] <= 0.0):
        row = int(np.flatnonzero(data[:, 1] <= 0.0)[0]) + 2
        raise DataError(f"{path}: row {row}: range must be positive")
    b = data[:, 2:5]
    n = np.linalg.norm(b, axis=1)
    bad = np.abs(n - 1.0) > 1e-6
    if np.any(bad):
        raise DataError(f"{path}: row {int(np.flatnonzero(bad)[0]) + 2}: bearing is not a unit vector")
    return Scan(float(data[0, 0]), data[:, 1], b / n[:, None])


def write_tum(path, times, poses: Sequence[Pose]) -> None:
    lines = []
    for t, T in zip(times, poses):
        vals = [t, *T.translation, *T.quaternion_xyzw()]
        lines.append(" ".join(f"{v:.12g}" for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_tum(path):
    """Returns ``(times, poses)``; ``#`` lines are comments."""
    path = _require(path)
    times, poses = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise DataError(f"{path}: row {lineno}: expected 8 fields, got {len(parts)}")
        try:
            v = np.array([float(x) for x in parts])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: non-numeric field") from None
        q = v[4:]
        if not np.isfinite(v).all() or abs(np.linalg.norm(q) - 1.0) > 1e-3:
            raise DataError(f"{path}: row {lineno}: invalid quaternion")
        times.append(v[0])
        poses.append(Pose.from_quaternion(v[1:4], q))
    return np.array(times), poses


def write_protection_csv(path, times, shapes) -> None:
    shapes = np.asarray(shapes, float).reshape(-1, 3, 3)
    rows = np.column_stack([np.asarray(times, float)] +
                           [shapes[:, i, j] for i, j in _UPPER])
    Path(path).write_text(",".join(PROTECTION_HEADER) + "\n" + _fmt_rows(rows, 12))


def read_protection_csv(path):
    """Returns ``(times, shapes)`` with full symmetric 3x3 shapes."""
    data = _read_csv(path, PROTECTION_HEADER)
    P = np.zeros((data.shape[0], 3, 3))
    for c, (i, j) in enumerate(_UPPER, start=1):
        P[:, i, j] = data[:, c]
        P[:, j, i] = data[:, c]
    return data[:, 0], P


def write_timing_csv(path, times, timings: Sequence[dict]) -> None:
    rows = [[t, d["icp"], d["uncertainty"], d["filter"], d["map"],
             d["icp"] + d["uncertainty"] + d["filter"] + d["map"]]
            for t, d in zip(times, timings)]
    Path(path).write_text(",".join(TIMING_HEADER) + "\n" + _fmt_rows(np.array(rows).reshape(-1, 6), 9))


def read_timing_csv(path) -> np.ndarray:
    return _read_csv(path, TIMING_HEADER)


def scan_path(directory, index: int) -> Path:
    return Path(directory) / "scans" / f"{index:06d}.csv"


def write_dataset(directory, imu: Sequence[ImuSample], scans: Sequence[Scan],
                  gt_times=None, gt_poses=None) -> Path:
    d = Path(directory)
    (d / "scans").mkdir(parents=True, exist_ok=True)
    write_imu_csv(d / "imu.csv", imu)
    for k, sc in enumerate(scans):
        write_scan_csv(scan_path(d, k), sc)
    if gt_times is not None:
        write_tum(d / "ground_truth.tum", gt_times, gt_poses)
    return d


def read_dataset(directory):
    """Returns ``(imu, scans)`` from a dataset directory."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: dataset directory not found")
    imu = read_imu_csv(d / "imu.csv")
    files = sorted((d / "scans").glob("*.csv")) if (d / "scans").is_dir() else []
    if not files:
        raise DataError(f"{d / 'scans'}: no scan files found")
    return imu, [read_scan_csv(f) for f in files]
