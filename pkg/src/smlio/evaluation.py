"""Trajectory metrics: cover rate, average interval length, ATE, end-to-end error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UsageError(ValueError):
    """Inputs cannot be evaluated (empty, misaligned or unassociated)."""


@dataclass(frozen=True)
class TrajectoryRecord:
    timestamp: float
    translation: np.ndarray
    rotation: np.ndarray | None
    shape_t: np.ndarray
    shape_theta: np.ndarray | None = None
    shape_t_local: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, float).reshape(3))
        P = np.asarray(self.shape_t, float).reshape(3, 3)
        if np.linalg.eigvalsh(0.5 * (P + P.T))[0] <= 0.0:
            raise ValueError(f"protection shape at t={self.timestamp} is not positive definite")
        object.__setattr__(self, "shape_t", P)


def check_monotone(records: Sequence[TrajectoryRecord]) -> None:
    t = np.array([r.timestamp for r in records])
    if np.any(np.diff(t) < 0.0):
        raise UsageError("record timestamps are not monotone")


def associate(est_times, gt_times, tol: float = 0.01):
    """Nearest-neighbour association of each estimate to a ground-truth time.

    Returns ``(est_idx, gt_idx, unmatched)``; estimates with no ground truth
    within ``tol`` seconds are dropped and counted.
    """
    est_times = np.asarray(est_times, float)
    gt_times = np.asarray(gt_times, float)
    if est_times.size == 0 or gt_times.size == 0:
        raise UsageError("nothing to associate")
    order = np.argsort(gt_times, kind="stable")
    g = gt_times[order]
    pos = np.clip(np.searchsorted(g, est_times), 1, g.size - 1) if g.size > 1 else np.zeros(est_times.size, int)
    if g.size > 1:
        left = pos - 1
        pick = np.where(np.abs(est_times - g[left]) <= np.abs(g[pos] - est_times), left, pos)
    else:
        pick = pos
    ok = np.abs(g[pick] - est_times) <= tol
    est_idx = np.flatnonzero(ok)
    if est_idx.size == 0:
        raise UsageError(f"no estimate lies within {tol} s of a ground-truth time")
    return est_idx, order[pick[ok]], int(np.count_nonzero(~ok))


def _quad_forms(errors: np.ndarray, shapes: np.ndarray) -> np.ndarray:
    sol = np.linalg.solve(shapes, errors[..., None])[..., 0]
    return np.einsum("ki,ki->k", errors, sol)


def cover_rate(records: Sequence[TrajectoryRecord], gt, use_local: bool = False) -> float:
    """Percentage of steps whose true position lies inside the protection level."""
    gt = np.asarray(gt, float).reshape(-1, 3)
    if len(records) == 0:
        raise UsageError("cover rate of an empty record list")
    if len(records) != gt.shape[0]:
        raise UsageError(f"{len(records)} records but {gt.shape[0]} ground-truth positions")
    if use_local:
        if any(r.shape_t_local is None for r in records):
            raise UsageError("local protection shapes are not available")
        shapes = np.array([r.shape_t_local for r in records])
    else:
        shapes = np.array([r.shape_t for r in records])
    err = gt - np.array([r.translation for r in records])
    return 100.0 * float(np.mean(_quad_forms(err, shapes) <= 1.0))


AIL_MODES = ("deterministic", "three_sigma")


def ail(records: Sequence[TrajectoryRecord], mode: str = "deterministic") -> float:
    """Average interval length: mean over steps and axes of the interval width.

    ``deterministic`` treats ``sqrt(P_ii)`` as the interval radius; ``three_sigma``
    treats ``P`` as a covariance and uses ``3 sqrt(P_ii)``.
    """
    if mode not in AIL_MODES:
        raise UsageError(f"unknown AIL mode {mode!r}")
    if len(records) == 0:
        raise UsageError("AIL of an empty record list")
    diag = np.array([np.diag(r.shape_t) for r in records])
    k = 2.0 if mode == "deterministic" else 6.0
    return float(np.mean(k * np.sqrt(diag)))


def umeyama_alignment(src: np.ndarray, dst: np.ndarray):
    """Rigid transform ``(R, t)`` minimizing ``sum ||R src_i + t - dst_i||^2``."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s) / src.shape[0]
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def ate(est, gt, align: bool = False) -> float:
    """RMSE of translation errors, optionally after rigid alignment of est onto gt."""
    est = np.asarray(est, float).reshape(-1, 3)
    gt = np.asarray(gt, float).reshape(-1, 3)
    if est.shape[0] == 0:
        raise UsageError("ATE of an empty trajectory")
    if est.shape != gt.shape:
        raise UsageError(f"{est.shape[0]} estimates but {gt.shape[0]} ground-truth positions")
    if align:
        R, t = umeyama_alignment(est, gt)
        est = est @ R.T + t
    return float(np.sqrt(np.mean(np.sum((est - gt) ** 2, axis=1))))


@dataclass(frozen=True)
class EndToEnd:
    error: float
    error_vector: np.ndarray
    quadratic_form: float
    covered: bool


def end_to_end_error(records: Sequence[TrajectoryRecord], gt) -> EndToEnd:
    """Error of the estimated start-to-end displacement against ground truth.

    ``covered`` reports whether the final protection level contains that
    error (membership of the error vector in the final set).
    """
    gt = np.asarray(gt, float).reshape(-1, 3)
    if len(records) == 0 or gt.shape[0] == 0:
        raise UsageError("end-to-end error of an empty trajectory")
    est_disp = records[-1].translation - records[0].translation
    gt_disp = gt[-1] - gt[0]
    e = est_disp - gt_disp
    q = float(e @ np.linalg.solve(records[-1].shape_t, e))
    return EndToEnd(float(np.linalg.norm(e)), e, q, q <= 1.0)


def evaluate(records: Sequence[TrajectoryRecord], gt_times, gt_translations,
             assoc_tol: float = 0.01, align: bool = False, use_local: bool = False,
             ail_mode: str = "deterministic") -> dict:
    """All metrics for one run, after timestamp association."""
    check_monotone(records)
    gt_translations = np.asarray(gt_translations, float).reshape(-1, 3)
    ei, gi, unmatched = associate([r.timestamp for r in records], gt_times, assoc_tol)
    recs = [records[i] for i in ei]
    gt = gt_translations[gi]
    e2e = end_to_end_error(recs, gt)
    return {
        "records": len(records),
        "associated": len(recs),
        "unmatched": unmatched,
        "cover_rate_percent": cover_rate(recs, gt, use_local),
        "ail_m": ail(recs, ail_mode),
        "ail_mode": ail_mode,
        "ate_rmse_m": ate([r.translation for r in recs], gt, align),
        "ate_aligned": align,
        "end_to_end_error_m": e2e.error,
        "end_to_end_quadratic_form": e2e.quadratic_form,
        "ending_covered": e2e.covered,
        "ending_coverage_test": "final error vector inside final translation protection level",
    }


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_report(metrics: dict) -> str:
    """``key = value`` lines, one per metric."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in metrics.items())


TABLE_HEADER = "| Method | CR [%] | AIL [m] | ATE [m] |\n|---|---|---|---|\n"


def table_row(name: str, metrics: dict) -> str:
    return (f"| {name} | {metrics['cover_rate_percent']:.3f} | {metrics['ail_m']:.3f} "
            f"| {metrics['ate_rmse_m']:.3f} |\n")


def per_step_rows(records: Sequence[TrajectoryRecord], gt) -> np.ndarray:
    """Per-step ``t, e_x, e_y, e_z, r_x, r_y, r_z`` (error and interval radius)."""
    gt = np.asarray(gt, float).reshape(-1, 3)
    t = np.array([r.timestamp for r in records])
    err = np.array([r.translation for r in records]) - gt
    rad = np.sqrt(np.array([np.diag(r.shape_t) for r in records]))
    return np.column_stack([t, err, rad])
