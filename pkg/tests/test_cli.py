"""CLI subcommands: dispatch, exit codes, and file outputs."""

from __future__ import annotations

import json

import pytest

from fsrm.cli import main
from fsrm.harness import write_benchmark
from fsrm.synthetic import make_samples


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "bench.jsonl"
    write_benchmark(make_samples(12, domains=("chat", "math"), seed=2), path)
    return path


@pytest.fixture
def sim_spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(
        json.dumps(
            {
                "seed": 7,
                "strata": [
                    {
                        "fast_accuracy": 0.8,
                        "slow_accuracy": 0.95,
                        "mean_intuition_conf": 0.6,
                        "mean_token_conf": 14.0,
                        "slow_tokens_lo": 40,
                        "slow_tokens_hi": 200,
                        "intuition_spread": 0.3,
                        "token_conf_spread": 2.0,
                    }
                ],
            }
        )
    )
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli("run", "--bogus") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_subcommand_is_usage_error(self):
        assert run_cli() == 1

    def test_hybrid_without_thresholds_is_usage_error(self, data_file, capsys):
        assert run_cli("run", "--mode", "hybrid", "--data", data_file) == 1
        assert "--calib or --thresholds" in capsys.readouterr().err

    def test_runtime_failure_is_exit_two(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        assert run_cli("run", "--mode", "fast", "--data", missing) == 2


class TestRoute:
    def test_prints_record_json(self, data_file, capsys):
        code = run_cli(
            "route", "--data", data_file, "--mode", "hybrid",
            "--thresholds", "0.6,14.0", "--backend", "sim", "--seed", 7,
        )
        assert code == 0
        record = json.loads(capsys.readouterr().out)
        assert record["sample_id"] == "s00000"
        assert record["mode"] == "hybrid"

    def test_selects_by_id(self, data_file, capsys):
        code = run_cli(
            "route", "--data", data_file, "--id", "s00003", "--mode", "fast",
            "--backend", "sim", "--seed", 7,
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["sample_id"] == "s00003"


class TestRunCommand:
    def test_happy_path_writes_records_and_manifest(self, data_file, tmp_path, capsys):
        out = tmp_path / "out"
        code = run_cli(
            "run", "--mode", "hybrid", "--data", data_file,
            "--thresholds", "0.6,14.0", "--backend", "sim", "--seed", 7,
            "--out", out,
        )
        assert code == 0
        assert (out / "records.jsonl").exists()
        assert (out / "manifest.json").exists()
        assert "12 records" in capsys.readouterr().out
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 7

    def test_idempotent_given_same_seed(self, data_file, tmp_path):
        args = [
            "run", "--mode", "fast", "--data", data_file, "--backend", "sim",
            "--seed", 3,
        ]
        assert run_cli(*args, "--out", tmp_path / "a") == 0
        assert run_cli(*args, "--out", tmp_path / "b") == 0
        records_a = (tmp_path / "a/records.jsonl").read_bytes()
        records_b = (tmp_path / "b/records.jsonl").read_bytes()
        assert records_a == records_b
        manifest_a = json.loads((tmp_path / "a/manifest.json").read_text())
        manifest_b = json.loads((tmp_path / "b/manifest.json").read_text())
        for manifest in (manifest_a, manifest_b):
            manifest.pop("started_at")
            manifest.pop("finished_at")
        assert manifest_a == manifest_b

    def test_sim_spec_file(self, data_file, sim_spec_file, tmp_path):
        code = run_cli(
            "run", "--mode", "slow", "--data", data_file, "--backend", "sim",
            "--sim-spec", sim_spec_file, "--out", tmp_path / "out",
        )
        assert code == 0

    def test_record_and_replay_pipeline(self, data_file, tmp_path):
        store = tmp_path / "session.jsonl"
        assert run_cli(
            "run", "--mode", "slow", "--data", data_file, "--backend", "sim",
            "--seed", 5, "--record", store, "--out", tmp_path / "live",
        ) == 0
        assert run_cli(
            "run", "--mode", "slow", "--data", data_file, "--backend", "replay",
            "--replay-file", store, "--out", tmp_path / "replayed",
        ) == 0
        assert (tmp_path / "live/records.jsonl").read_bytes() == (
            tmp_path / "replayed/records.jsonl"
        ).read_bytes()


class TestConfigFile:
    def test_config_file_fills_unset_flags(self, data_file, tmp_path):
        config_path = tmp_path / "cli.json"
        config_path.write_text(json.dumps({"seed": 9, "thresholds": "0.6,14.0"}))
        out = tmp_path / "out"
        code = run_cli(
            "run", "--mode", "hybrid", "--data", data_file, "--backend", "sim",
            "--config", config_path, "--out", out,
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9
        assert manifest["config"]["thresholds"]["tau_intuition"] == 0.6

    def test_flags_override_config_file(self, data_file, tmp_path):
        config_path = tmp_path / "cli.json"
        config_path.write_text(json.dumps({"seed": 9}))
        out = tmp_path / "out"
        code = run_cli(
            "run", "--mode", "fast", "--data", data_file, "--backend", "sim",
            "--config", config_path, "--seed", 4, "--out", out,
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 4


class TestCalibrateCommand:
    def test_writes_calibration_file(self, data_file, tmp_path, capsys):
        out = tmp_path / "calibration.json"
        code = run_cli(
            "calibrate", "--data", data_file, "--backend", "sim", "--seed", 7,
            "--k", 20, "--out", out,
        )
        assert code == 0
        calibration = json.loads(out.read_text())
        assert calibration["k"] == 20
        assert 0 <= calibration["tau_intuition"] <= 1
        assert "calibrated" in capsys.readouterr().out


class TestSweepAndReportCommands:
    @pytest.fixture
    def recorded_run(self, data_file, tmp_path):
        out = tmp_path / "full"
        assert run_cli(
            "run", "--mode", "hybrid", "--data", data_file, "--backend", "sim",
            "--seed", 7, "--thresholds", "inf,inf", "--out", out,
        ) == 0
        return out / "records.jsonl"

    def test_sweep_csv(self, recorded_run, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = run_cli(
            "sweep", "--records", recorded_run, "--grid", "0:0.3:0.9,8:4:16",
            "--out", out,
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("source,tau_intuition")
        assert len(lines) == 1 + 4 * 3 + 4  # header + grid + quantile rows

    def test_report_with_slow_pair(self, data_file, recorded_run, tmp_path):
        slow_out = tmp_path / "slow"
        assert run_cli(
            "run", "--mode", "slow", "--data", data_file, "--backend", "sim",
            "--seed", 7, "--out", slow_out,
        ) == 0
        report_dir = tmp_path / "report"
        code = run_cli(
            "report", "--records", recorded_run,
            "--slow-records", slow_out / "records.jsonl", "--out", report_dir,
        )
        assert code == 0
        assert (report_dir / "report.md").exists()
        assert (report_dir / "report.csv").exists()


class TestTrainToyCommand:
    def test_writes_curve(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        code = run_cli("train-toy", "--seed", 0, "--steps", 300, "--out", out)
        assert code == 0
        assert out.exists()
        assert "accuracy" in capsys.readouterr().out


class TestSelfcheckCommand:
    def test_all_suites_pass(self, capsys):
        assert run_cli("selfcheck", "--seed", 0) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5
        assert "FAIL" not in out
