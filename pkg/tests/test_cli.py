import hashlib
import math
import re

import numpy as np
import pytest

from smlio.cli import SCHEMA, ConfigError, cmd_eval, main, parse_config
from smlio.formats import (DataError, read_dataset, read_protection_csv, read_scan_csv,
                           read_timing_csv, read_tum, write_protection_csv, write_scan_csv,
                           write_tum)
from smlio.manifold import Pose, so3_exp
from smlio.sensing import Scan

SHORT = "[simulation]\nduration = 10\n"


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> run on a 10 s episode, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "short.ini"
    cfg.write_text(SHORT)
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "ds")]) == 0
    assert main(["run", str(root / "ds"), "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


# config

def test_defaults():
    cfg = parse_config("")
    assert cfg.get("icp", "max_iterations") == 30
    odo = cfg.odometry()
    assert math.isclose(odo.lidar_noise.b_phi, math.radians(0.1))
    assert cfg.simulation().trajectory.duration == 60.0


BAD_VALUES = {float: "-1", int: "-1", str: "nonsense", bool: "maybe"}


def test_every_out_of_range_field_rejected():
    messages = set()
    for sec, keys in SCHEMA.items():
        for key, (typ, _, check, need) in keys.items():
            bad = BAD_VALUES[typ]
            if check is not None and typ is float and check(-1.0):
                bad = "nan"
            if check is not None and typ is int and check(-1):
                continue
            text = f"# comment\n\n[{sec}]\n{key} = {bad}\n"
            with pytest.raises(ConfigError) as exc:
                parse_config(text, "cfg.ini")
            msg = str(exc.value)
            assert msg.startswith("cfg.ini:4: "), msg
            assert f"[{sec}] {key}" in msg and need in msg
            messages.add(msg)
    n_fields = sum(len(k) for k in SCHEMA.values())
    assert len(messages) == n_fields


def test_other_config_errors():
    with pytest.raises(ConfigError, match=r"cfg.ini:2: unknown section \[bogus\]"):
        parse_config("\n[bogus]\nx = 1\n", "cfg.ini")
    with pytest.raises(ConfigError, match=r"cfg.ini:2: unknown key 'b_x' in \[lidar\]"):
        parse_config("[lidar]\nb_x = 1\n", "cfg.ini")
    with pytest.raises(ConfigError, match="integer multiple"):
        parse_config("[simulation]\nlidar_rate = 7\n", "cfg.ini")
    with pytest.raises(ConfigError, match="three numbers"):
        parse_config("[extrinsics]\ntranslation = 1, 2\n", "cfg.ini")


def test_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[lidar]\nb_r = -3\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "bad.ini:2" in capsys.readouterr().err


# formats

def test_scan_roundtrip(tmp_path):
    b = np.array([[0.6, 0.0, 0.8], [0, 1.0, 0]])
    s = Scan(1.25, [3.0, 4.5], b)
    write_scan_csv(tmp_path / "s.csv", s)
    s2 = read_scan_csv(tmp_path / "s.csv")
    assert s2.timestamp == 1.25 and np.array_equal(s2.ranges, s.ranges)
    assert np.allclose(s2.bearings, b, atol=1e-12)


def test_xyz_cloud_converted(tmp_path):
    (tmp_path / "c.csv").write_text("t,x,y,z\n2.0,3,0,4\n2.0,0,0,1\n")
    s = read_scan_csv(tmp_path / "c.csv")
    assert s.timestamp == 2.0 and np.allclose(s.ranges, [5, 1])
    assert np.allclose(s.bearings[0], [0.6, 0, 0.8])
    (tmp_path / "d.csv").write_text("x,y,z\n1,0,0\n")
    with pytest.raises(DataError):
        read_scan_csv(tmp_path / "d.csv")
    assert read_scan_csv(tmp_path / "d.csv", timestamp=3.0).timestamp == 3.0


def test_malformed_csv_names_row(tmp_path):
    p = tmp_path / "protection.csv"
    p.write_text("t,p11,p12,p13,p22,p23,p33\n0,1,0,0,1,0,1\n0.1,1,0,x,1,0,1\n")
    with pytest.raises(DataError, match=r"protection.csv: row 3"):
        read_protection_csv(p)
    p.write_text("t,a\n")
    with pytest.raises(DataError, match="row 1"):
        read_protection_csv(p)


def test_tum_and_protection_roundtrip(tmp_path):
    poses = [Pose(so3_exp([0.1 * k, 0.2, -0.3]), [k, 2.0, 3.0]) for k in range(3)]
    write_tum(tmp_path / "a.tum", [0.0, 0.1, 0.2], poses)
    t, p2 = read_tum(tmp_path / "a.tum")
    assert np.allclose(t, [0, 0.1, 0.2])
    assert all(np.allclose(a.rotation, b.rotation, atol=1e-11) for a, b in zip(poses, p2))
    P = np.array([[2.0, 0.1, 0.2], [0.1, 3.0, 0.3], [0.2, 0.3, 4.0]])
    write_protection_csv(tmp_path / "p.csv", [0.5], [P])
    _, P2 = read_protection_csv(tmp_path / "p.csv")
    assert np.array_equal(P2[0], P)


# pipeline

def test_simulate_layout(pipeline):
    ds = pipeline / "ds"
    lines = (ds / "imu.csv").read_text().splitlines()
    assert lines[0] == "t,ax,ay,az,gx,gy,gz" and len(lines) - 1 == 2000
    assert len(list((ds / "scans").glob("*.csv"))) == 100
    assert (ds / "scans" / "000000.csv").read_text().startswith("t,range,bx,by,bz\n")
    # 9 significant digits in imu.csv
    assert all(len(re.sub(r"[-.]|e.*", "", v).lstrip("0")) <= 9 for v in lines[5].split(","))
    tum = (ds / "ground_truth.tum").read_text().splitlines()
    assert len(tum) == 2000 and len(tum[0].split()) == 8


def test_simulate_deterministic(pipeline, tmp_path):
    cfg = pipeline / "short.ini"
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert tree_digest(tmp_path / "again") == tree_digest(pipeline / "ds")


def test_run_outputs(pipeline):
    run = pipeline / "run"
    for name in ("est.tum", "protection.csv", "protection_local.csv", "timing.csv", "map.xyz"):
        assert (run / name).is_file()
    timing = read_timing_csv(run / "timing.csv")
    assert np.allclose(timing[:, 1:5].sum(axis=1), timing[:, 5], rtol=1e-6)
    imu, scans = read_dataset(pipeline / "ds")
    assert len(imu) == 2000 and len(scans) == 100


def test_eval_and_table(pipeline, tmp_path, capsys):
    run, ds = pipeline / "run", pipeline / "ds"
    rc = main(["eval", "--est", str(run / "est.tum"), "--protection", str(run / "protection.csv"),
               "--gt", str(ds / "ground_truth.tum"), "--out", str(tmp_path / "ev")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cover_rate_percent = 100\n" in out
    table = (tmp_path / "ev" / "table.md").read_text().splitlines()
    assert table[0] == "| Method | CR [%] | AIL [m] | ATE [m] |"
    assert re.fullmatch(r"\| smlio \| 100\.000 \| \d+\.\d{3} \| \d+\.\d{3} \|", table[2])
    m, _, _ = cmd_eval(run / "est.tum", run / "protection.csv", ds / "ground_truth.tum",
                       use_local=True)
    assert m["cover_rate_percent"] == 100.0


def test_eval_identity(pipeline):
    ds = pipeline / "ds"
    t, poses = read_tum(ds / "ground_truth.tum")
    d = pipeline / "ident"
    d.mkdir(exist_ok=True)
    write_tum(d / "est.tum", t[::20], poses[::20])
    write_protection_csv(d / "protection.csv", t[::20], [np.eye(3)] * len(t[::20]))
    m, _, _ = cmd_eval(d / "est.tum", d / "protection.csv", ds / "ground_truth.tum")
    assert m["cover_rate_percent"] == 100.0 and m["ate_rmse_m"] == 0.0


def test_missing_gt_exit_code(pipeline, capsys):
    run = pipeline / "run"
    missing = pipeline / "nope.tum"
    rc = main(["eval", "--est", str(run / "est.tum"), "--protection", str(run / "protection.csv"),
               "--gt", str(missing)])
    assert rc == 3
    assert str(missing) in capsys.readouterr().err


def test_missing_dataset_exit_code(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3
    assert "none" in capsys.readouterr().err


def test_plot(pipeline, tmp_path):
    run, ds = pipeline / "run", pipeline / "ds"
    args = ["plot", "--protection", str(run / "protection.csv"), "--est", str(run / "est.tum"),
            "--gt", str(ds / "ground_truth.tum")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["error_x.svg", "error_y.svg", "error_z.svg", "trajectory.svg"]
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    svg = (tmp_path / "a" / "error_x.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg


def test_plot_envelope_symmetric(pipeline):
    from smlio.cli import load_records
    from smlio.evaluation import per_step_rows
    run = pipeline / "run"
    recs = load_records(run / "est.tum", run / "protection.csv")
    rows = per_step_rows(recs, np.array([r.translation for r in recs]))
    # zero error line sits exactly in the middle of the +-radius band
    assert np.all(rows[:, 1:4] == 0.0) and np.all(rows[:, 4:] > 0)


def test_plot_golden_tiny(tmp_path):
    from smlio.evaluation import TrajectoryRecord
    from smlio.plotting import plot_run
    recs = [TrajectoryRecord(0.1 * k, [k, 0, 0], np.eye(3), 0.01 * np.eye(3)) for k in range(5)]
    files = plot_run(recs, 0.1 * np.arange(5), [[k, 0.05, 0] for k in range(5)], tmp_path)
    svg = files[0].read_text()
    m = re.search(r'<svg[^>]*width="([\d.]+)pt" height="([\d.]+)pt"', svg)
    assert m and (float(m.group(1)), float(m.group(2))) == (504.0, 216.0)
    m = re.search(r'<svg[^>]*width="([\d.]+)pt" height="([\d.]+)pt"', files[3].read_text())
    assert (float(m.group(1)), float(m.group(2))) == (360.0, 360.0)
