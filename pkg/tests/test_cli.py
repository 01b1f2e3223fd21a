import csv
import json
import subprocess
import sys

import pytest

from cliquechain.analysis import liveness_parameter
from cliquechain.cli import main


def read_grid(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_simulate_canonical(tmp_path):
    assert main(["simulate", "--config", "canonical", "--out", str(tmp_path)]) == 0
    out = tmp_path / "canonical"
    report = json.loads((out / "report.json").read_text())
    assert report["liveness"] == 1.0
    assert (out / "series.csv").read_text().startswith("period,liveness,")
    assert json.loads((out / "ledger.json").read_text())
    assert (out / "series.png").stat().st_size > 0


def test_simulate_withholder_tracks_exact_liveness(tmp_path):
    assert main(["simulate", "--config", "withholder_third", "--periods", "1000", "--no-plots",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "withholder_third" / "report.json").read_text())
    exact = float(liveness_parameter(100, 67, "1/3"))
    assert report["analytic_liveness"] == pytest.approx(exact)
    assert abs(report["liveness"] - exact) <= 0.05


def test_malformed_config_fails_with_schema_message(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "bad"\nperiods = 10\n[protocol]\nthreads = "two"\n')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err
    assert "config error" in err and "protocol.threads" in err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CLIQUECHAIN_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", "canonical", "--periods", "10", "--no-plots"]) == 0
    assert (tmp_path / "env" / "canonical" / "report.json").exists()


def test_seed_override_and_parallel_sweep(tmp_path):
    args = ["simulate", "--config", "canonical", "--periods", "10", "--no-plots", "--seed", "40",
            "--sweep", "2", "--parallel", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    seeds = sorted(json.loads((p / "report.json").read_text())["seed"] for p in tmp_path.iterdir())
    assert seeds == [40, 41]


def test_safety_grid_defaults(tmp_path):
    assert main(["safety-grid", "--out", str(tmp_path)]) == 0
    rows = read_grid(tmp_path / "safety_grid.csv")
    Es = sorted({int(r["E"]) for r in rows})
    assert Es[0] == 32 and Es[-1] == 160
    assert {r["band"] for r in rows} >= {"<1y", ">=1e4y"}
    head = [r for r in rows if r["E"] == "96" and r["Q"] == f"{2 / 3:.6f}"]
    assert len(head) == 1 and float(head[0]["probability"]) == pytest.approx(2.647236e-11, rel=1e-6)
    summary = json.loads((tmp_path / "safety_grid.json").read_text())
    assert summary["headline"]["threshold"] == 64
    assert (tmp_path / "safety_grid.png").stat().st_size > 0


def test_safety_grid_without_attacker(tmp_path):
    assert main(["safety-grid", "--beta", "0", "--no-plots", "--out", str(tmp_path)]) == 0
    for r in read_grid(tmp_path / "safety_grid.csv"):
        assert float(r["probability"]) == (1.0 if float(r["Q"]) == 0 else 0.0)


def test_safety_grid_rejects_bad_range(tmp_path):
    assert main(["safety-grid", "--e-min", "50", "--e-max", "40", "--out", str(tmp_path)]) == 2


def test_replay_default_and_weak_attacker(tmp_path):
    assert main(["replay-fork-attack", "--out", str(tmp_path / "a")]) == 0
    assert main(["replay-fork-attack", "--beta", "0.05", "--out", str(tmp_path / "b")]) == 0
    for d in ("a", "b"):
        res = json.loads((tmp_path / d / "fork_attack.json").read_text())
        assert res["checks"]["attack_never_final"] and res["checks"]["b_i_final"]
        assert (tmp_path / d / "fork_attack_trace.txt").read_text().count("frame=3") > 0


def test_replay_zero_margin_finalizes_quickly(tmp_path):
    assert main(["replay-fork-attack", "--delta-f", "0", "--out", str(tmp_path)]) == 0
    per = json.loads((tmp_path / "fork_attack.json").read_text())["periods"]
    assert per["b_i_final"] <= per["second_certificate"] + 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cliquechain", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "safety-grid" in r.stdout
