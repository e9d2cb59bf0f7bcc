import csv
import json
import logging
from pathlib import Path

import pytest

from sagin_jspr.cli import main, parse_deltas
from sagin_jspr.scenario import DEFAULT_CONFIG, ConfigError

TOY = str(Path(__file__).parent / "data" / "toy.yaml")


def error_record(capsys) -> dict:
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.startswith("{")]
    return json.loads(lines[-1])


def test_parse_deltas():
    assert parse_deltas("0.1:1.0:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert parse_deltas("0,0.5") == [0.0, 0.5]
    with pytest.raises(ConfigError):
        parse_deltas("1:0:0.1")
    with pytest.raises(ConfigError):
        parse_deltas("a,b")


def test_build_default_summary(tmp_path, capsys):
    assert main(["build", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "datacenters: 6 (Athens, Helsinki, Liverpool, Lviv, Madrid, Strasbourg)" in text
    assert "satellite gateways: 2 (Florence, Patras)" in text
    assert "satellite relays: 1 (LEO)" in text
    assert "duration 90 min" in text
    assert (tmp_path / "scenario.json").exists()


def test_build_missing_flights(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"topology: {DEFAULT_CONFIG.parent / 'europe_topology.yaml'}\n"
                   f"stations: {DEFAULT_CONFIG.parent / 'da2g_stations.csv'}\nflights: nowhere/flights.csv\n")
    assert main(["build", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    rec = error_record(capsys)
    assert rec["exit_code"] == 2 and "nowhere/flights.csv" in rec["message"]
    assert json.loads((tmp_path / "o" / "error.json").read_text())["error"] == "config"


def test_static_mode_single_slot(tmp_path):
    assert main(["solve", "--config", TOY, "--mode", "static", "--slot", "1", "--out", str(tmp_path), "--export-models"]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert len(plan["slots"]) == 1 and plan["slots"][0]["slot"] == 1
    assert (tmp_path / "models" / "sjspr_t1.lp").read_text().startswith("\\")


def test_ma_gap_and_validate(tmp_path, capsys):
    assert main(["solve", "--config", str(DEFAULT_CONFIG), "--mode", "ma", "--gap", "0.05", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["gap"] <= 0.05
    assert report["total_cost"] == pytest.approx(
        report["deployment_cost"] + report["routing_cost"] + report["migration_cost"]
    )
    assert main(["validate", str(tmp_path)]) == 0
    assert "plan valid" in capsys.readouterr().out


def test_rerun_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["solve", "--config", TOY, "--mode", "rollout", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    for f in ("scenario.json", "plan.json", "report.json", "solution.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_overrides_file(tmp_path):
    main(["build", "--config", TOY, "--seed", "9", "--out", str(tmp_path / "a")])
    main(["build", "--config", TOY, "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "scenario.json").read_text())
    b = json.loads((tmp_path / "b" / "scenario.json").read_text())
    assert a["seed"] == 9 and b["seed"] == 4


def test_infeasible_exit_code(tmp_path, capsys):
    cfg = tmp_path / "tight.yaml"
    base = Path(TOY).parent
    cfg.write_text(
        f"topology: {base / 'toy_topology.yaml'}\nstations: {base / 'toy_stations.csv'}\nflights: null\n"
        "services:\n  - {id: voip, per_user_mbps: 0.064, max_delay_ms: 5}\n"
    )
    assert main(["solve", "--config", str(cfg), "--mode", "ma", "--out", str(tmp_path / "o")]) == 3
    assert error_record(capsys)["error"] == "infeasible"


def test_limit_without_incumbent(tmp_path, capsys):
    rc = main(["solve", "--mode", "ma", "--time-limit", "0.0001", "--out", str(tmp_path)])
    assert rc == 4
    assert error_record(capsys)["error"] == "limit_without_incumbent"


def test_validate_detects_tampering(tmp_path, capsys):
    assert main(["solve", "--config", TOY, "--mode", "ma", "--out", str(tmp_path)]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())
    first = plan["slots"][0]
    first["instances"] = [[j, k, 0] for j, k, _ in first["instances"]]
    (tmp_path / "plan.json").write_text(json.dumps(plan))
    assert main(["validate", str(tmp_path)]) == 5
    assert error_record(capsys)["error"] == "validation"


def test_sweep_row_count(tmp_path):
    rc = main(["sweep", "--config", TOY, "--deltas", "0.1:1.0:0.1", "--gap", "0.05", "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 * 2 * 2
    with open(tmp_path / "results.csv") as fh:
        assert all(r["status"] in ("optimal", "gap_reached") for r in csv.DictReader(fh))


def test_solve_mode_sweep_delegates(tmp_path):
    rc = main(["solve", "--config", TOY, "--mode", "sweep", "--deltas", "0,1", "--classes", "short",
               "--modes", "ma", "--out", str(tmp_path)])
    assert rc == 0 and (tmp_path / "summary.csv").exists()


def test_bad_mode_rejected():
    with pytest.raises(SystemExit):
        main(["solve", "--mode", "greedy"])


def test_log_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SAGIN_JSPR_LOG", "debug")
    assert main(["build", "--config", TOY, "--out", str(tmp_path)]) == 0
    assert logging.getLogger("sagin_jspr").level == logging.DEBUG
    monkeypatch.setenv("SAGIN_JSPR_LOG", "warning")
    main(["build", "--config", TOY, "--out", str(tmp_path)])
    assert logging.getLogger("sagin_jspr").level == logging.WARNING
