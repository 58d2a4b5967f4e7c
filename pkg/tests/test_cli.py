import filecmp
import os
import subprocess
import sys
from pathlib import Path

import pytest

from brwlab import io
from brwlab.cli import main

SMALL = """
[law]
kind = {kind}

[simulate]
seed = 11
n_stop = 8
replicas = {replicas}

[calibrate]
draws = 20000

[potential]
draws = 2000
n_ladders = 2000
x_grid = lin:1:6:6
y_list = 9

[lambert]
cases = 20
"""


def write_cfg(d: Path, kind="lattice_bernoulli", replicas=100, extra=""):
    d.mkdir(parents=True, exist_ok=True)
    p = d / "run.ini"
    p.write_text(SMALL.format(kind=kind, replicas=replicas) + extra)
    return p


def run_cli(cfg, *args, threads=None):
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    cmd = [sys.executable, "-m", "brwlab", *args, "--config", str(cfg)]
    if threads is not None:
        cmd += ["--threads", str(threads)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=600)


def test_missing_seed_is_error(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[law]\nkind = binary_gaussian\n")
    assert main(["simulate", "--config", str(p)]) == 2
    assert "seed" in capsys.readouterr().err


def test_tail_names_missing_sample(tmp_path, capsys):
    p = write_cfg(tmp_path)
    assert main(["tail", "--config", str(p)]) == 2
    assert "sample.jsonl" in capsys.readouterr().err


def test_simulate_resume_appends(tmp_path):
    p = write_cfg(tmp_path, replicas=50)
    assert main(["simulate", "--config", str(p)]) == 0
    path = tmp_path / "out" / "sample.jsonl"
    first = path.read_text()
    p.write_text(p.read_text().replace("replicas = 50", "replicas = 150"))
    assert main(["simulate", "--config", str(p), "--resume"]) == 0
    assert len(io.read_jsonl(path)) == 150
    assert path.read_text().startswith(first)
    man = io.read_json(tmp_path / "out" / "manifest_simulate.json")
    assert man["rows"]["new"] == 100
    meta = io.read_json(io.meta_path(path))
    assert "sample_hash" in meta and "config_hash" in meta


def test_resume_refuses_other_config(tmp_path, capsys):
    p = write_cfg(tmp_path, replicas=20)
    assert main(["simulate", "--config", str(p)]) == 0
    p.write_text(p.read_text().replace("n_stop = 8", "n_stop = 9"))
    assert main(["simulate", "--config", str(p), "--resume"]) == 2


def test_potential_lattice_identity_row(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["potential", "--config", str(p)]) == 0
    hdr, rows = io.read_csv(tmp_path / "out" / "potential_identity.csv")
    assert "config_hash" in hdr
    dp = [r for r in rows if r["method"] == "lattice_dp"][0]
    assert abs(float(dp["value"]) - 24) < 1e-8
    man = io.read_json(tmp_path / "out" / "manifest_potential.json")
    assert man["acceptance"]["occupation_routes_agree"] is True


def test_fluct_rejects_lattice(tmp_path, capsys):
    p = write_cfg(tmp_path)
    assert main(["fluct", "--config", str(p)]) == 2
    assert "nonarithmetic" in capsys.readouterr().err


def test_calibrate_and_lambert(tmp_path):
    p = write_cfg(tmp_path, kind="binary_gaussian")
    assert main(["calibrate", "--config", str(p)]) == 0
    assert main(["lambert-selftest", "--config", str(p)]) == 0
    hdr, rows = io.read_csv(tmp_path / "out" / "calibrate.csv")
    assert {r["name"] for r in rows} >= {"m1", "drift", "sigma2"}


def test_calibrate_gate_failure(tmp_path):
    p = write_cfg(tmp_path, kind="binary_gaussian", extra="[law.params]\nm = 1.0\n")
    assert main(["calibrate", "--config", str(p)]) == 1


@pytest.mark.parametrize("command", ["simulate", "calibrate", "potential", "lambert-selftest"])
def test_deterministic_across_threads(tmp_path, command):
    outs = []
    for threads in (1, 4):
        d = tmp_path / f"t{threads}"
        p = write_cfg(d, kind="binary_gaussian", replicas=200)
        r = run_cli(p, command, threads=threads)
        assert r.returncode == 0, r.stderr
        outs.append(d / "out")
    names = sorted(f.name for f in outs[0].iterdir() if not f.name.startswith("manifest_"))
    assert names == sorted(f.name for f in outs[1].iterdir() if not f.name.startswith("manifest_"))
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    assert not mismatch and not errors
