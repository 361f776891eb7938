"""Command-line entry point: ``simulate``, ``run``, ``eval`` and ``plot``.

Configuration is an INI file (``key = value`` lines under sections). Every
field is optional and validated on load; errors name the file line.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime inconsistency.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import (TABLE_HEADER, TrajectoryRecord, UsageError, evaluate, format_report,
                         table_row)
from .filter import DISJOINT_POLICIES, InconsistencyError
from .formats import (DataError, read_dataset, read_protection_csv, read_tum, write_dataset,
                      write_protection_csv, write_timing_csv, write_tum)
from .mapping import MapParams
from .odometry import OdometryConfig, default_p_nl, run_odometry
from .registration import IcpParams
from .sensing import Extrinsics, ImuNoiseSpec, InitializationError, LidarNoiseSpec
from .simulation import SimulationSpec, TrajectorySpec, simulate_dataset

log = logging.getLogger("smlio")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _int_at_least(n):
    return lambda x: x >= n


# section -> key -> (type, default, check, requirement text)
SCHEMA = {
    "lidar": {
        "b_r": (float, 0.08, _nonneg, "must be >= 0"),
        "b_phi_deg": (float, 0.1, _nonneg, "must be >= 0"),
    },
    "imu": {
        "b_a": (float, 0.2, _nonneg, "must be >= 0"),
        "b_g": (float, 0.07, _nonneg, "must be >= 0"),
        "bias_fraction": (float, 0.1, _nonneg, "must be >= 0"),
    },
    "icp": {
        "max_iterations": (int, 30, _int_at_least(1), "must be an integer >= 1"),
        "converge_tol": (float, 1e-6, _pos, "must be > 0"),
        "refresh_tol": (float, 1e-3, _pos, "must be > 0"),
        "gate_tol": (float, 1e-3, _pos, "must be > 0"),
        "min_correspondences": (int, 10, _int_at_least(6), "must be an integer >= 6"),
        "cond_max": (float, 1e8, lambda x: x > 1, "must be > 1"),
        "max_halvings": (int, 4, _int_at_least(0), "must be an integer >= 0"),
        "trim_factor": (float, math.inf, lambda x: x >= 1, "must be >= 1 (inf disables)"),
        "trim_floor": (float, 0.0, _nonneg, "must be >= 0"),
        "min_normal_spread": (float, 0.1, lambda x: 0 <= x < 1 / 3, "must be in [0, 1/3)"),
    },
    "map": {
        "voxel_size": (float, 0.5, _pos, "must be > 0"),
        "k": (int, 5, _int_at_least(3), "must be an integer >= 3"),
        "max_corr_dist": (float, 1.0, _pos, "must be > 0"),
        "plane_tol": (float, 0.05, _pos, "must be > 0"),
        "local_map_radius": (float, 50.0, _pos, "must be > 0"),
    },
    "filter": {
        "p_nl_radius": (float, 1e-4, _nonneg, "must be >= 0"),
        "nl_mode": (str, "per_point", lambda x: x in ("per_point", "single"),
                    "must be per_point or single"),
        "init_duration": (float, 1.5, _pos, "must be > 0"),
        "init_radius_t": (float, 0.0, _nonneg, "must be >= 0"),
        "init_radius_v": (float, 0.01, _nonneg, "must be >= 0"),
        "init_radius_theta": (float, 0.005, _nonneg, "must be >= 0"),
        "gravity": (float, 9.81, _pos, "must be > 0"),
        "dt_max": (float, 0.02, _pos, "must be > 0"),
        "on_disjoint": (str, "skip", lambda x: x in DISJOINT_POLICIES,
                        "must be one of " + ", ".join(DISJOINT_POLICIES)),
    },
    "extrinsics": {
        "translation": (str, "0, 0, 0.1", None, "must be three numbers"),
        "rpy_deg": (str, "0, 0, 0", None, "must be three numbers"),
    },
    "simulation": {
        "curve": (str, "room_loop", lambda x: x in ("stationary", "line", "circle", "room_loop"),
                  "must be one of stationary, line, circle, room_loop"),
        "duration": (float, 60.0, _pos, "must be > 0"),
        "imu_rate": (float, 200.0, _pos, "must be > 0"),
        "lidar_rate": (float, 10.0, _pos, "must be > 0"),
        "radius": (float, 5.0, _pos, "must be > 0"),
        "period": (float, 20.0, _pos, "must be > 0"),
        "seed": (int, 0, _int_at_least(0), "must be an integer >= 0"),
        "adversarial": (bool, False, None, "must be true or false"),
        "accel_bias": (str, "0.004, -0.003, 0.002", None, "must be three numbers"),
        "gyro_bias": (str, "0.002, -0.001, 0.0015", None, "must be three numbers"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def vector(self, section: str, key: str) -> np.ndarray:
        return np.array([float(x) for x in self.values[section][key].split(",")])

    def lidar_noise(self) -> LidarNoiseSpec:
        return LidarNoiseSpec(self.get("lidar", "b_r"), math.radians(self.get("lidar", "b_phi_deg")))

    def imu_noise(self) -> ImuNoiseSpec:
        f = self.get("imu", "bias_fraction")
        b_a, b_g = self.get("imu", "b_a"), self.get("imu", "b_g")
        return ImuNoiseSpec(b_a, b_g, 3 * (f * b_a) ** 2 * np.eye(3), 3 * (f * b_g) ** 2 * np.eye(3))

    def extrinsics(self) -> Extrinsics:
        from scipy.spatial.transform import Rotation
        R = Rotation.from_euler("xyz", self.vector("extrinsics", "rpy_deg"), degrees=True).as_matrix()
        return Extrinsics(R, self.vector("extrinsics", "translation"))

    def odometry(self) -> OdometryConfig:
        icp = {k: self.get("icp", k) for k in SCHEMA["icp"]}
        mp = {k: self.get("map", k) for k in SCHEMA["map"]}
        f = self.values["filter"]
        return OdometryConfig(
            lidar_noise=self.lidar_noise(), imu_noise=self.imu_noise(),
            icp=IcpParams(**icp), map=MapParams(**mp), extrinsics=self.extrinsics(),
            p_nl=default_p_nl(f["p_nl_radius"]), nl_mode=f["nl_mode"],
            init_duration=f["init_duration"], init_radius_t=f["init_radius_t"],
            init_radius_v=f["init_radius_v"], init_radius_theta=f["init_radius_theta"],
            gravity=f["gravity"], dt_max=f["dt_max"], on_disjoint=f["on_disjoint"])

    def simulation(self) -> SimulationSpec:
        s = self.values["simulation"]
        traj = TrajectorySpec(curve=s["curve"], duration=s["duration"], imu_rate=s["imu_rate"],
                              lidar_rate=s["lidar_rate"], radius=s["radius"], period=s["period"])
        return SimulationSpec(trajectory=traj, lidar_noise=self.lidar_noise(),
                              imu_noise=self.imu_noise(),
                              accel_bias=tuple(self.vector("simulation", "accel_bias")),
                              gyro_bias=tuple(self.vector("simulation", "gyro_bias")),
                              extrinsics=self.extrinsics(), seed=s["seed"],
                              adversarial=s["adversarial"], gravity=self.get("filter", "gravity"))


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    where = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where[(section, None)] = n
        elif "=" in line and section is not None:
            where.setdefault((section, line.split("=", 1)[0].strip().lower()), n)
    return where


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_numbers(text)
    values = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((sec, None), '?')}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            at = f"{source}:{lines.get((sec, key), '?')}"
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{at}: unknown key '{key}' in [{sec}]")
            typ, _, check, need = SCHEMA[sec][key]
            try:
                if typ is bool:
                    val = _parse_bool(raw)
                elif typ is int:
                    val = int(raw)
                else:
                    val = typ(raw)
            except ValueError:
                raise ConfigError(f"{at}: [{sec}] {key} = {raw!r}: {need}") from None
            if need == "must be three numbers":
                try:
                    bad = len([float(x) for x in val.split(",")]) != 3
                except ValueError:
                    bad = True
            else:
                bad = ((typ is float and math.isnan(val))
                       or (check is not None and not check(val)))
            if bad:
                raise ConfigError(f"{at}: [{sec}] {key} = {raw!r}: {need}")
            values[sec][key] = val
    sim = values["simulation"]
    ratio = sim["imu_rate"] / sim["lidar_rate"]
    if abs(ratio - round(ratio)) > 1e-9:
        at = f"{source}:{lines.get(('simulation', 'lidar_rate'), '?')}"
        raise ConfigError(f"{at}: [simulation] imu_rate must be an integer multiple of lidar_rate")
    return RunConfig(values)


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config("")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: config file not found")
    return parse_config(p.read_text(), str(p))


def cmd_simulate(config: RunConfig, out) -> Path:
    spec = config.simulation()
    ds = simulate_dataset(spec)
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create output directory ({exc.strerror})") from None
    tr = ds.truth
    write_dataset(out, ds.imu, ds.scans, tr.t, [tr.pose(k) for k in range(len(tr))])
    return out


def cmd_run(dataset, config: RunConfig, out) -> Path:
    imu, scans = read_dataset(dataset)
    res = run_odometry(imu, scans, config.odometry())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    times = res.timestamps
    write_tum(out / "est.tum", times, [r.state.pose for r in res.records])
    write_protection_csv(out / "protection.csv", times, res.protection_shapes)
    write_protection_csv(out / "protection_local.csv", times,
                         [r.bounds.P_t for r in res.records])
    write_timing_csv(out / "timing.csv", times, [r.timing for r in res.records])
    res.map.export_xyz(out / "map.xyz")
    return out


def load_records(est_path, protection_path, local_path=None) -> list[TrajectoryRecord]:
    t_est, poses = read_tum(est_path)
    t_p, shapes = read_protection_csv(protection_path)
    local = read_protection_csv(local_path)[1] if local_path else [None] * len(t_p)
    if t_est.size != t_p.size or np.any(np.abs(t_est - t_p) > 1e-6):
        raise DataError(f"{est_path} and {protection_path} have different timestamps")
    return [TrajectoryRecord(t, T.translation, T.rotation, P, None, L)
            for t, T, P, L in zip(t_est, poses, shapes, local)]


def cmd_eval(est, protection, gt, assoc_tol=0.01, align=False, use_local=False,
             ail_mode="deterministic", name="smlio") -> tuple[dict, str, str]:
    local = Path(protection).with_name("protection_local.csv") if use_local else None
    records = load_records(est, protection, local)
    t_gt, gt_poses = read_tum(gt)
    metrics = evaluate(records, t_gt, np.array([T.translation for T in gt_poses]),
                       assoc_tol, align, use_local, ail_mode)
    return metrics, format_report(metrics), TABLE_HEADER + table_row(name, metrics)


def cmd_plot(protection, est, gt, out, assoc_tol=0.01) -> list[Path]:
    from .plotting import plot_run
    records = load_records(est, protection)
    t_gt, gt_poses = read_tum(gt)
    return plot_run(records, t_gt, np.array([T.translation for T in gt_poses]), out, assoc_tol)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smlio", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run the estimator on a dataset")
    p.add_argument("dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="compute metrics for a run")
    p.add_argument("--est", required=True)
    p.add_argument("--protection", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--assoc-tol", type=float, default=0.01)
    p.add_argument("--align", action="store_true")
    p.add_argument("--local", action="store_true", help="use the local protection level")
    p.add_argument("--ail-mode", choices=("deterministic", "three_sigma"), default="deterministic")
    p.add_argument("--name", default="smlio")
    p.add_argument("--out", help="directory for metrics.txt and table.md")

    p = sub.add_parser("plot", help="plot errors against protection levels")
    p.add_argument("--protection", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            out = cmd_simulate(load_config(args.config), args.out)
            print(f"dataset written to {out}")
        elif args.command == "run":
            out = cmd_run(args.dataset, load_config(args.config), args.out)
            print(f"results written to {out}")
        elif args.command == "eval":
            _, report, table = cmd_eval(args.est, args.protection, args.gt, args.assoc_tol,
                                        args.align, args.local, args.ail_mode, args.name)
            sys.stdout.write(report + "\n" + table)
            if args.out:
                d = Path(args.out)
                d.mkdir(parents=True, exist_ok=True)
                (d / "metrics.txt").write_text(report)
                (d / "table.md").write_text(table)
        elif args.command == "plot":
            for f in cmd_plot(args.protection, args.est, args.gt, args.out):
                print(f)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UsageError, InitializationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InconsistencyError as exc:
        print(f"runtime inconsistency: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
