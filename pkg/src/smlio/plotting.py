"""Static SVG plots of per-axis error against the protection-level envelope."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import TrajectoryRecord, associate, per_step_rows


def plot_run(records: Sequence[TrajectoryRecord], gt_times, gt_translations, out,
             assoc_tol: float = 0.01) -> list[Path]:
    """Write ``error_x.svg``, ``error_y.svg``, ``error_z.svg`` and ``trajectory.svg``.

    Each axis plot shows ``estimate - truth`` with the band ``+-sqrt(P_ii)``
    centred on the estimate (zero error line), so it is symmetric by construction.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ei, gi, _ = associate([r.timestamp for r in records], gt_times, assoc_tol)
    recs = [records[i] for i in ei]
    gt = np.asarray(gt_translations, float)[gi]
    rows = per_step_rows(recs, gt)
    t = rows[:, 0]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    # fixed metadata keeps the SVG output byte-stable
    meta = {"Date": None, "Creator": None}
    with matplotlib.rc_context({"svg.hashsalt": "smlio", "svg.fonttype": "none"}):
        for axis, name in enumerate("xyz"):
            err, rad = rows[:, 1 + axis], rows[:, 4 + axis]
            fig, ax = plt.subplots(figsize=(7, 3))
            ax.fill_between(t, -rad, rad, color="tab:blue", alpha=0.25, label="protection level")
            ax.plot(t, err, color="tab:red", lw=1.0, label="error")
            ax.set_xlabel("time [s]")
            ax.set_ylabel(f"{name} error [m]")
            ax.legend(loc="upper right")
            fig.tight_layout()
            f = out / f"error_{name}.svg"
            fig.savefig(f, format="svg", metadata=meta)
            plt.close(fig)
            files.append(f)
        est = np.array([r.translation for r in recs])
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(gt[:, 0], gt[:, 1], color="k", lw=1.0, label="ground truth")
        ax.plot(est[:, 0], est[:, 1], color="tab:red", lw=1.0, ls="--", label="estimate")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best")
        fig.tight_layout()
        f = out / "trajectory.svg"
        fig.savefig(f, format="svg", metadata=meta)
        plt.close(fig)
        files.append(f)
    return files
