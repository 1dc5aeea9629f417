import json

import pandas as pd
import pytest

from src.cli.commands import COMMANDS, build_parser, load_config, main
from src.cli.manifest import RunManifest
from src.utils.errors import FrozenParameterError, GraphError


TINY = {
    "train": {"lookback": 24, "horizon": 4, "epochs": 2, "patience": 1, "batch_size": 32,
              "learning_rate": 0.01, "seed": 0},
    "tcn": {"num_blocks": 2, "channels": 4, "kernel_size": 2, "dropout": 0.0, "head_hidden": 4},
    "search": {"budget": 2, "num_blocks": [1, 2], "channels": [4], "kernel_size": [2], "batch_size": [32]},
    "data": {"folds": 2},
    "transfer": {"lookback": 24, "horizon": 4, "budget_hours": 240, "appended_channels": 4},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic sessions for two sites, ingested into feature frames."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.json"
    config.write_text(json.dumps(TINY))
    for site, shift in (("A", "0"), ("B", "3")):
        assert main([
            "synth", "--site-id", site, "--months", "2", "--sessions-per-day", "24", "--hour-shift", shift,
            "--seed", "1", "--out", str(root / f"synth-{site}"),
        ]) == 0
        assert main(["ingest", "--sessions", str(root / f"synth-{site}" / "sessions.csv"),
                     "--out", str(root / "frames")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "train"
    assert main([
        "train", "--frame", str(workspace / "frames" / "A.frame.csv"),
        "--config", str(workspace / "tiny.json"), "--out", str(out),
    ]) == 0
    return out


# =========================
# Exit codes
# =========================

def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "chargecast" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["train", "--frame", "x.csv", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().out


def test_missing_subcommand_is_a_usage_error():
    assert main([]) == 1


def test_missing_file_exits_two_and_names_it(tmp_path, capsys):
    missing = tmp_path / "nowhere.frame.csv"
    assert main(["train", "--frame", str(missing), "--out", str(tmp_path / "out")]) == 2
    assert str(missing) in capsys.readouterr().out


def test_invalid_config_is_a_usage_error(tmp_path):
    assert main(["train", "--frame", "x.csv", "--epochs", "3", "--patience", "5", "--out", str(tmp_path)]) == 1


def test_quantiles_without_median_are_a_usage_error(tmp_path, capsys):
    config = tmp_path / "no-median.json"
    config.write_text(json.dumps({"train": {"quantiles": [0.05, 0.9]}}))
    assert main(["train", "--frame", "x.csv", "--config", str(config), "--out", str(tmp_path)]) == 1
    assert "0.5" in capsys.readouterr().out


@pytest.mark.parametrize("error", [GraphError("missing gradient"), FrozenParameterError("frozen parameter moved")])
def test_training_failures_exit_three(monkeypatch, tmp_path, capsys, error):
    def broken(args, config, out, manifest):
        raise error

    monkeypatch.setitem(COMMANDS, "train", broken)
    assert main(["train", "--frame", "x.csv", "--out", str(tmp_path)]) == 3
    assert str(error) in capsys.readouterr().out


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"train": {"epoch": 3}}))
    assert main(["train", "--frame", "x.csv", "--config", str(config), "--out", str(tmp_path)]) == 1
    assert "train.epoch" in capsys.readouterr().out


# =========================
# Configuration
# =========================

def test_flags_override_file_over_defaults(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"train": {"epochs": 2, "patience": 1, "lookback": 48}}))
    args = build_parser().parse_args(["train", "--frame", "f.csv", "--config", str(config), "--epochs", "7"])

    resolved = load_config(args)

    assert resolved["train"]["epochs"] == 7
    assert resolved["train"]["lookback"] == 48
    assert resolved["train"]["horizon"] == 24
    assert resolved["data"]["test_frac"] == 0.10


def test_transfer_flags_size_the_target(tmp_path):
    args = build_parser().parse_args(
        ["transfer", "--source", "s.ckpt", "--target", "t.csv", "--lookback", "48", "--horizon", "6"]
    )
    resolved = load_config(args)
    assert (resolved["transfer"]["lookback"], resolved["transfer"]["horizon"]) == (48, 6)
    assert resolved["train"]["lookback"] == 168


# =========================
# End-to-end
# =========================

def test_ingest_writes_frames_and_sidecars(workspace):
    frames = workspace / "frames"
    for site in ("A", "B"):
        assert (frames / f"{site}.frame.csv").exists()
        meta = json.loads((frames / f"{site}.frame.csv.meta.json").read_text())
        assert meta["site_id"] == site
        assert meta["hours"] > 24 * 50


def test_train_writes_run_outputs(trained):
    for name in ("best.ckpt", "report.json", "forecasts.csv", "config.json", "plot_data.csv",
                 "coverage_bands.csv", "manifest.json"):
        assert (trained / name).exists(), name
    report = json.loads((trained / "report.json").read_text())
    plot = pd.read_csv(trained / "plot_data.csv")
    assert len(plot) == report["metrics"]["n_steps"] * 4
    assert set(plot["series"]) == {"actual", "q05", "q50", "q90"}
    bands = pd.read_csv(trained / "coverage_bands.csv")
    assert 100.0 * bands["covered"].mean() == pytest.approx(report["metrics"]["picp"])


def test_train_records_manifest(trained, workspace):
    manifest = RunManifest.read(trained / "manifest.json")
    assert manifest.subcommand == "train"
    assert manifest.config["train"]["epochs"] == 2
    assert str(workspace / "tiny.json") in manifest.inputs
    assert str(workspace / "frames" / "A.frame.csv") in manifest.inputs


def test_forecast_emits_one_horizon(trained, workspace, tmp_path):
    origin = pd.read_csv(trained / "forecasts.csv")["origin"].iloc[0]
    out = tmp_path / "forecast"

    assert main([
        "forecast", "--ckpt", str(trained / "best.ckpt"), "--frame", str(workspace / "frames" / "A.frame.csv"),
        "--origin", origin, "--out", str(out),
    ]) == 0

    table = pd.read_csv(out / "forecasts.csv")
    assert len(table) == 4
    assert list(table.columns) == ["origin", "timestamp", "step", "q05", "q50", "q90"]
    assert list(table["step"]) == [1, 2, 3, 4]


def test_forecast_rejects_unknown_origin(trained, workspace, tmp_path):
    assert main([
        "forecast", "--ckpt", str(trained / "best.ckpt"), "--frame", str(workspace / "frames" / "A.frame.csv"),
        "--origin", "1999-01-01 00:00", "--out", str(tmp_path),
    ]) == 2


def test_evaluate_matches_training_report(trained, workspace, tmp_path):
    out = tmp_path / "evaluate"
    assert main([
        "evaluate", "--ckpt", str(trained / "best.ckpt"), "--frame", str(workspace / "frames" / "A.frame.csv"),
        "--config", str(workspace / "tiny.json"), "--out", str(out),
    ]) == 0

    trained_metrics = json.loads((trained / "report.json").read_text())["metrics"]
    evaluated = json.loads((out / "report.json").read_text())["metrics"]
    for key in ("picp", "pinball", "winkler", "nd"):
        assert evaluated[key] == pytest.approx(trained_metrics[key], rel=1e-12)


def test_dtw_ranks_candidates(workspace, tmp_path):
    frames = workspace / "frames"
    out = tmp_path / "dtw"
    assert main([
        "dtw", "--target", str(frames / "B.frame.csv"),
        "--candidates", str(frames / "A.frame.csv"), str(frames / "B.frame.csv"), "--out", str(out),
    ]) == 0

    ranking = json.loads((out / "ranking.json").read_text())
    assert ranking["target"] == "B"
    assert [r["source_id"] for r in ranking["ranking"]][0] == "B"


def test_transfer_runs_from_checkpoint(trained, workspace, tmp_path):
    out = tmp_path / "transfer"
    assert main([
        "transfer", "--source", str(trained / "best.ckpt"), "--target", str(workspace / "frames" / "B.frame.csv"),
        "--config", str(workspace / "tiny.json"), "--no-scratch", "--out", str(out),
    ]) == 0

    parameters = json.loads((out / "parameters.json").read_text())
    assert parameters["trainable"] < parameters["scratch_total"]
    assert "scratch" not in json.loads((out / "report.json").read_text())


# =========================
# Replay
# =========================

def test_replay_reproduces_report(trained, tmp_path):
    out = tmp_path / "replayed"
    assert main(["replay", "--manifest", str(trained / "manifest.json"), "--out", str(out)]) == 0
    assert (out / "report.json").read_bytes() == (trained / "report.json").read_bytes()
    assert (out / "forecasts.csv").read_bytes() == (trained / "forecasts.csv").read_bytes()


def test_replay_refuses_changed_inputs(workspace, tmp_path):
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps(TINY))
    run_dir = tmp_path / "run"
    assert main([
        "train", "--frame", str(workspace / "frames" / "A.frame.csv"), "--config", str(config),
        "--epochs", "1", "--patience", "0", "--out", str(run_dir),
    ]) == 0
    config.write_text(json.dumps({**TINY, "data": {"folds": 3}}))

    assert main(["replay", "--manifest", str(run_dir / "manifest.json"), "--out", str(tmp_path / "again")]) == 2
