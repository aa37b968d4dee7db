import json
import subprocess
import sys

import yaml

from sdenkf import harness
from sdenkf.cli import main

SMALL = {"preset": "l96-full", "name": "tiny", "model": {"K": 16, "spinup_steps": 100},
         "cycles": 2, "realizations": 2, "filters": ["EnKF", "DCT", "DWT-S"],
         "observation": {"kind": "region", "variance": 0.04, "first": 8}}


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "l96-full" in out and "sw-full-desk" in out
    assert main(["presets", "l96-partial"]) == 0
    dumped = yaml.safe_load(capsys.readouterr().out)
    assert dumped["observation"]["first"] == 128


def test_selftest_passes(capsys):
    assert main(["selftest", "--instances", "12"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_verify_theory_writes_csv(tmp_path, capsys):
    path = tmp_path / "theory.csv"
    assert main(["verify-theory", "--replications", "2000", "-o", str(path)]) == 0
    lines = path.read_text().splitlines()
    assert lines[0].startswith("check,theory,empirical")
    assert len(lines) == 1 + 16 + 4 + 6
    assert "26/26 checks passed" in capsys.readouterr().out


def test_run_writes_table_and_metadata(tmp_path, capsys):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert main(["run", str(cfg), "-o", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "DWT-S" in out and "free" in out
    rows = (tmp_path / "out" / "tiny.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 3
    meta = json.loads((tmp_path / "out" / "tiny.meta.json").read_text())
    assert meta["config"]["name"] == "tiny"


def test_run_command_line_overrides(tmp_path):
    assert main(["run", "--preset", "l96-full", "--cycles", "1", "--realizations", "1",
                 "--filters", "DCT", "-o", str(tmp_path)]) == 0
    rows = (tmp_path / "l96-full.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].split(",")[1] == "DCT"


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**SMALL, "filters": ["FFT"]}))
    assert main(["run", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["run"]) == 2


def test_divergence_is_not_an_error(tmp_path):
    cfg = tmp_path / "div.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "divergence_factor": 1e-9}))
    assert main(["run", str(cfg), "-o", str(tmp_path)]) == 0


def test_filter_crash_exits_nonzero(tmp_path, monkeypatch, capsys):
    def broken(*a, **k):
        raise RuntimeError("kernel bug")

    monkeypatch.setitem(harness.analysis.KERNELS, "few_points", broken)
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert main(["run", str(cfg), "-o", str(tmp_path)]) == 1
    assert "kernel bug" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sdenkf.cli", "presets"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "sw-full" in proc.stdout
