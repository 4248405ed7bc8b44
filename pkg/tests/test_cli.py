import json
import subprocess
import sys

import numpy as np
import pytest

from nlperim import cli
from nlperim.experiments import ExperimentResult
from nlperim.gridgeom import GridSet, halfspace
from nlperim.io import write_set, read_set
from nlperim.kernels import make_kernel, save_kernel


@pytest.fixture
def files(tmp_path):
    write_set(halfspace((16, 16), 1 / 8, (0, 1), 0.0), str(tmp_path / "half.pbm"))
    write_set(GridSet(np.ones((12, 12), bool), 0.25), str(tmp_path / "ones.pbm"))
    save_kernel(make_kernel("fractional", 2, s=0.5), str(tmp_path / "frac05.json"))
    return tmp_path


def test_perimeter_row(files, capsys):
    rc = cli.main(["--out", str(files), "perimeter", "--set", str(files / "half.pbm"),
                   "--kernel", str(files / "frac05.json"), "--omega", "ball:0,0,1", "--csv", "p.csv"])
    out = capsys.readouterr().out.splitlines()
    assert rc == 0 and len(out) == 2
    assert out[1].count(",") == out[0].count(",")
    assert out[1].split(",")[2] == "ball:0;0;1"
    assert (files / "p.csv").read_text().splitlines() == out


def test_minimize_fills_omega(files, capsys):
    rc = cli.main(["--out", str(files / "m"), "minimize", "--exterior", str(files / "ones.pbm"),
                   "--omega", "ball:0,0,1", "--cutoff", "4"])
    assert rc == 0
    E = read_set(str(files / "m" / "E_min.pbm"))
    assert E.u.all()
    row = (files / "m" / "minimize.csv").read_text().splitlines()[1].split(",")
    assert float(row[1]) == 0.0


def test_flow_and_snapshots(files, capsys):
    rc = cli.main(["--out", str(files / "f"), "flow", "--tau", "0.001", "--steps", "4",
                   "--world", "16", "--init", "ball:0.4", "--cutoff", "4", "--snapshots", "2",
                   "--schedule", "custom", "--omega-value", "0.002"])
    assert rc == 0
    assert (files / "f" / "trajectory.csv").exists() and (files / "f" / "final.pbm").exists()
    assert (files / "f" / "step_0002.pbm").exists()


def test_certify_and_crofton(files, capsys):
    rc = cli.main(["--out", str(files / "c"), "certify", "--set", str(files / "half.pbm"),
                   "--ball", "0,0,0.9", "--directions", "36"])
    assert rc == 0
    cert = json.loads((files / "c" / "certificate.json").read_text())
    assert cert["symdiff"] == 0
    capsys.readouterr()
    rc = cli.main(["crofton", "--set", str(files / "half.pbm"), "--lines", "2000"])
    assert rc == 0
    est, se, per = map(float, capsys.readouterr().out.splitlines()[1].split(","))
    assert abs(est - per) <= 4 * se + 0.25


def test_audit_kernel(files, capsys):
    assert cli.main(["audit-kernel", "--samples", "200"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["kernel"]["family"] == "fractional"


def test_experiment_bitmap_slope(files, capsys):
    rc = cli.main(["--out", str(files / "e"), "experiment", "bitmap", "--s", "0.5"])
    rep = json.loads(capsys.readouterr().out)
    assert rc == 0 and rep["passed"]
    assert abs(rep["summary"]["slopes"]["0.5"] - 0.5) <= 0.15


def test_exit_codes(files, capsys, monkeypatch):
    assert cli.main(["perimeter", "--set", str(files / "missing.pbm")]) == 2
    assert cli.main(["perimeter", "--set", str(files / "half.pbm"), "--omega", "ball:1"]) == 2
    assert cli.main(["flow", "--tau", "0.1", "--steps", "1", "--schedule", "custom"]) == 2
    assert cli.main(["experiment", "bv", "--s", "0.3"]) == 2
    assert cli.main(["--bogus"]) == 2
    assert cli.main(["nosuch"]) == 2
    monkeypatch.setattr(cli, "run_experiment", lambda cfg: ExperimentResult([], [], {}, False))
    assert cli.main(["--out", str(files), "experiment", "bv"]) == 1


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "nlperim.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
