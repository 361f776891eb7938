"""Simulate a short room loop, run the estimator and report protection levels.

Run: python3 demos/protection_levels.py [duration_s]
"""

import sys

import numpy as np

from smlio import OdometryConfig, SimulationSpec, TrajectorySpec, run_odometry, simulate_dataset
from smlio.evaluation import TrajectoryRecord, ail, ate, cover_rate

duration = float(sys.argv[1]) if len(sys.argv) > 1 else 20.0
ds = simulate_dataset(SimulationSpec(TrajectorySpec(duration=duration), seed=3))
res = run_odometry(ds.imu, ds.scans, OdometryConfig())

gt = ds.truth.position[ds.scan_indices][-len(res.records):]
recs = [TrajectoryRecord(r.timestamp, r.state.translation, r.state.rotation,
                         r.protection.translation_set.shape) for r in res.records]

print(" t [s]   error [m]  radius [m]  inside")
for r, g in list(zip(recs, gt))[::20]:
    e = r.translation - g
    radius = np.sqrt(np.linalg.eigvalsh(r.shape_t)[-1])
    print(f"{r.timestamp:6.1f}  {np.linalg.norm(e):9.4f}  {radius:10.4f}  "
          f"{e @ np.linalg.solve(r.shape_t, e) <= 1.0}")

accepted = np.mean([r.accepted for r in res.records])
print(f"\nscans accepted {100 * accepted:.1f}%")
print(f"CR {cover_rate(recs, gt):.1f}%  AIL {ail(recs):.3f} m  ATE {ate([r.translation for r in recs], gt):.3f} m")
