import csv
import json
import logging

import numpy as np
import pytest

import enaam_sim.experiments as exp
from enaam_sim.cli import main
from enaam_sim.forecaster import LstmModel
from enaam_sim.simulator import CSV_COLUMNS

FAST = ["--set", "forecaster=seasonal-naive", "--set", "traces.days=4"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def simulate(tmp_path, *extra):
    out = tmp_path / "out"
    code = main(["simulate", "--output-dir", str(out), *FAST, *extra])
    return code, out


def test_simulate_three_policies(tmp_path, capsys):
    code, out = simulate(tmp_path, "--set", "alphas=[0]")
    assert code == 0
    runs = sorted(p.name for p in (out / "runs").iterdir())
    assert runs == ["deta-r_a0_s0.csv", "enaam_a0_s0.csv", "no-management_a0_s0.csv"]
    for name in runs:
        table = rows(out / "runs" / name)
        assert len(table) == 96 and tuple(table[0]) == CSV_COLUMNS
    prof = rows(out / "savings_enaam_a0.csv")
    assert len(prof) == 24 and "savings_s0" in prof[0] and "utilization_mean" in prof[0]
    assert "enaam" in capsys.readouterr().out


def test_simulate_empty_policies(tmp_path, capsys):
    code, out = simulate(tmp_path, "--set", "policies=[]")
    assert code == 2
    assert "policies" in capsys.readouterr().err
    assert not out.exists()


def test_simulate_two_seeds(tmp_path):
    code, out = simulate(tmp_path, "--set", "seeds=[0, 1]", "--set", "policies=[enaam]", "--set", "alphas=[0.5]")
    assert code == 0
    assert {p.name for p in (out / "runs").iterdir()} == {"enaam_a0.5_s0.csv", "enaam_a0.5_s1.csv"}
    summary = json.loads((out / "summary.json").read_text())
    per_seed = [r["mean_savings"] for r in summary["runs"]]
    assert summary["means"][0]["mean_savings"] == pytest.approx(np.mean(per_seed), abs=1e-12)
    assert summary["means"][0]["seeds"] == [0, 1]
    prof = rows(out / "savings_enaam_a0.5.csv")
    assert {"savings_s0", "savings_s1", "savings_mean"} <= set(prof[0])


def test_summary_recomputable_from_slot_csvs(tmp_path):
    code, out = simulate(tmp_path, "--set", "alphas=[0.5]")
    assert code == 0
    base = np.array([float(r["drained_kj"]) for r in rows(out / "runs" / "no-management_a0.5_s0.csv")])
    for row in rows(out / "summary.csv"):
        drained = np.array([float(r["drained_kj"]) for r in rows(out / "runs" / f"{row['policy']}_a0.5_s0.csv")])
        assert float(row["mean_savings"]) == pytest.approx(np.mean(1 - drained / base), abs=1e-9)


def test_sweep_alpha(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep-alpha", "--output-dir", str(out), *FAST, "--set", "alphas=[0, 0.5, 1]"])
    assert code == 0
    table = rows(out / "sweep_alpha.csv")
    assert [float(r["alpha"]) for r in table] == [0.0, 0.5, 1.0]
    trend = json.loads((out / "sweep_alpha.json").read_text())["trend"]
    assert -1.0 <= trend["kendall_tau"] <= 1.0
    assert "kendall_tau" in capsys.readouterr().out


def test_sweep_duplicate_alphas(tmp_path, caplog):
    out = tmp_path / "sweep"
    with caplog.at_level(logging.WARNING):
        code = main(["sweep-alpha", "--output-dir", str(out), *FAST, "--set", "alphas=[0.5, 0.5, 1]"])
    assert code == 0
    assert len(rows(out / "sweep_alpha.csv")) == 2
    assert "duplicate alpha" in caplog.text


def test_sweep_needs_two_alphas(tmp_path):
    assert main(["sweep-alpha", "--output-dir", str(tmp_path / "s"), *FAST, "--set", "alphas=[0.5]"]) == 2


def test_gen_traces(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-traces", "--days", "30", "--seed", "5", "--output-dir", str(a)]) == 0
    assert main(["gen-traces", "--days", "30", "--seed", "5", "--output-dir", str(b)]) == 0
    for name in ("load_s5.csv", "harvest_s5.csv"):
        assert len(rows(a / name)) == 720
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gen_traces_zero_days(tmp_path, capsys):
    assert main(["gen-traces", "--days", "0", "--output-dir", str(tmp_path)]) == 2
    assert "days" in capsys.readouterr().err


def test_simulate_from_generated_csv(tmp_path):
    main(["gen-traces", "--days", "3", "--output-dir", str(tmp_path / "tr")])
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        "policies: [enaam, no-management]\n"
        "alphas: [0]\n"
        "forecaster: seasonal-naive\n"
        "traces:\n"
        f"  load_csv: {tmp_path / 'tr' / 'load_s0.csv'}\n"
        f"  harvest_csv: {tmp_path / 'tr' / 'harvest_s0.csv'}\n"
        "  csv_is_aggregate: false\n"
    )
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--output-dir", str(out)]) == 0
    assert len(rows(out / "runs" / "enaam_a0_s0.csv")) == 72


def test_unknown_config_key(tmp_path, capsys):
    assert main(["simulate", "--output-dir", str(tmp_path / "o"), "--set", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_forecast_train(tmp_path, capsys):
    main(["gen-traces", "--days", "4", "--output-dir", str(tmp_path)])
    model_path = tmp_path / "m.json"
    code = main(["forecast-train", "--series", str(tmp_path / "load_s0.csv"), "--epochs", "3",
                 "--out", str(model_path)])
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["epochs_run"] == 3
    assert LstmModel.load(model_path).lookback == 24


def test_partial_outputs_removed(tmp_path, monkeypatch):
    calls = []

    def flaky(result, path):
        calls.append(path)
        if len(calls) == 2:
            raise ValueError("disk full")
        path.write_text("partial")

    monkeypatch.setattr(exp, "write_records_csv", flaky)
    code, out = simulate(tmp_path, "--set", "alphas=[0]")
    assert code == 2
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == []
