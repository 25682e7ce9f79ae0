import csv
import json
import subprocess
import sys

import pytest

from iampc.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["design", "--gain", "[[1.0, 0.8]]", "--out", str(d / "design.json")]) == 0
    assert main(["sets", "--design", str(d / "design.json"), "--out", str(d / "sets")]) == 0
    cfg = {"initial": {"kind": "explicit", "points": [[10.0, -10.0]]},
           "xi_policy": {"kind": "random", "count": 2}, "steps": 25}
    (d / "cfg.json").write_text(json.dumps(cfg))
    return d


def test_sets_reports_horizon(workdir, capsys):
    main(["sets", "--design", str(workdir / "design.json"), "--out", str(workdir / "sets2")])
    assert "N = 8" in capsys.readouterr().out


def test_simulate_then_verify(workdir, capsys):
    run = workdir / "run"
    rc = main(["simulate", "--config", str(workdir / "cfg.json"), "--design",
               str(workdir / "design.json"), "--sets", str(workdir / "sets"),
               "--out", str(run)])
    assert rc == 0
    assert main(["verify", "--traces", str(run), "--out", str(workdir / "report.json")]) == 0
    report = json.loads((workdir / "report.json").read_text())
    assert report["passed"] is True and report["n_traces"] == 2
    assert "PASSED" in capsys.readouterr().out


def test_verify_flags_corrupted_trace(workdir, tmp_path):
    run = tmp_path / "run"
    main(["simulate", "--config", str(workdir / "cfg.json"), "--design",
          str(workdir / "design.json"), "--sets", str(workdir / "sets"), "--out", str(run)])
    path = run / "trace_d00_s000.csv"
    rows = list(csv.reader(path.open()))
    rows[5][1] = "99.0"  # x0 at t = 4
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["verify", "--traces", str(run)]) == 1


def test_sweep(workdir, capsys):
    out = workdir / "sweep.csv"
    rc = main(["sweep", "--config", str(workdir / "cfg.json"), "--design",
               str(workdir / "design.json"), "--sets", str(workdir / "sets"),
               "--gains", "0.5", "0.05", "--out", str(out)])
    assert rc == 0 and out.exists()
    text = capsys.readouterr().out
    assert "gain 0.5" in text and "gain 0.05" in text


def test_input_errors(tmp_path):
    assert main(["verify", "--traces", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"steps": 0}))
    assert main(["simulate", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["design", "--Q", "not json"])


def test_infeasible_design_exit_code(tmp_path):
    model = {"vertex_A": [[[2.0]], [[-2.0]]], "B": [[0.0]],
             "X": {"lower": [-1.0], "upper": [1.0]},
             "U": {"dim": 1, "normals": [[1.0], [-1.0]], "offsets": [1.0, 1.0]}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model))
    assert main(["design", "--model", str(path), "--out", str(tmp_path / "d.json")]) == 3


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "iampc.cli", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for sub in ("design", "sets", "simulate", "verify", "sweep"):
        assert sub in res.stdout
