"""
Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error or missing file,
3 numerical failure. Every subcommand writes manifest.json into its output
directory so the run can be replayed.
"""

import argparse
import copy
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config.settings import OUTPUT_ROOT, default_config, resolve_config, validate_config
from ..data.features import build_feature_frame, load_frame, save_frame
from ..data.pipeline import FeaturePipeline
from ..data.sessions import load_holidays, load_sessions, write_sessions
from ..data.synth import generate_sessions, profile_from_config
from ..metrics.evaluation import IntervalSpec
from ..model.checkpoint import load_checkpoint
from ..model.tcn import QuantileForecast, sort_quantiles
from ..training.harness import (
    default_hyperparameters,
    evaluate_model,
    final_fit_and_test,
    held_out_start,
    run_search,
)
from ..transfer.dtw import rank_sources
from ..transfer.transfer import TransferPlan, data_size_sweep, transfer_experiment
from ..utils.errors import DataError, FrozenParameterError, GraphError, NumericalError, UsageError
from ..utils.io import read_json, write_csv, write_json
from ..utils.logger import setup_logger
from .manifest import RunManifest
from .plots import emit_plot_data, evaluation_series

logger = logging.getLogger("ChargeCast")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


# =========================
# Parser
# =========================
class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on usage errors."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _quantile_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; its values override the defaults")
    parser.add_argument("--out", help="Output directory (default: $CHARGECAST_OUTPUT_DIR/<subcommand>)")
    parser.add_argument("--seed", type=int, default=None, help="Root seed for every random choice")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes for CV trials")
    parser.add_argument("--verbose", action="store_true", help="Log DEBUG messages to the console")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lookback", type=int, default=None)
    parser.add_argument("--horizon", type=int, default=None)
    parser.add_argument("--quantiles", type=_quantile_list, default=None, help="e.g. 0.05,0.5,0.9")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--sort-quantiles", action="store_true", default=None,
                        help="Repair quantile crossing before scoring")


def build_parser() -> CliParser:
    parser = CliParser(prog="chargecast", description="Probabilistic EV-charging load forecasting")
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    p = sub.add_parser("synth", help="Generate a synthetic session file")
    _common(p)
    p.add_argument("--site-id", default=None)
    p.add_argument("--start", default=None)
    p.add_argument("--months", type=int, default=None)
    p.add_argument("--hour-shift", type=int, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--sessions-per-day", type=float, default=None)
    p.add_argument("--holidays", help="Holiday calendar CSV (date, name)")

    p = sub.add_parser("ingest", help="Aggregate sessions into hourly feature frames")
    _common(p)
    p.add_argument("--sessions", required=True, help="Session CSV or JSON-lines file")
    p.add_argument("--site", action="append", help="Site id to keep (repeatable; default all)")
    p.add_argument("--holidays", help="Holiday calendar CSV (date, name)")
    p.add_argument("--end-date", default=None, help="Drop sessions connecting on or after this date")

    p = sub.add_parser("train", help="Fit one configuration and evaluate the held-out tail")
    _common(p)
    _model_flags(p)
    p.add_argument("--frame", required=True)

    p = sub.add_parser("cv", help="Random search with blocked CV, then final fit")
    _common(p)
    _model_flags(p)
    p.add_argument("--frame", required=True)
    p.add_argument("--budget", type=int, default=None, help="Number of random-search trials")
    p.add_argument("--folds", type=int, default=None)

    p = sub.add_parser("evaluate", help="Score a checkpoint on a frame's held-out tail")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--sort-quantiles", action="store_true", default=None)

    p = sub.add_parser("dtw", help="Rank candidate source sites by DTW distance")
    _common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--window-days", type=int, default=None)
    p.add_argument("--band", type=int, default=None)

    p = sub.add_parser("transfer", help="Head-replacement transfer to a data-scarce target")
    _common(p)
    _model_flags(p)
    p.add_argument("--source", required=True, help="Source checkpoint")
    p.add_argument("--target", required=True, help="Target feature frame")
    p.add_argument("--budget-hours", type=int, default=None)
    p.add_argument("--appended-blocks", type=int, default=None)
    p.add_argument("--unfreeze-top", type=int, default=None)
    p.add_argument("--no-scratch", action="store_true", help="Skip the from-scratch comparison")

    p = sub.add_parser("forecast", help="Forecast one horizon from a given origin")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--origin", required=True, help="Timestamp of the last lookback hour")
    p.add_argument("--sort-quantiles", action="store_true", default=None)

    p = sub.add_parser("sweep", help="Transfer runs over target budgets and lookback/horizon settings")
    _common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--budgets", type=_int_list, default=None, help="e.g. 336,720,2160,4320")
    p.add_argument("--scratch", action="store_true", help="Also train from-scratch models")

    p = sub.add_parser("replay", help="Re-run a recorded run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    return parser


# =========================
# Configuration
# =========================
def flag_config(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Explicit flags as a config layer; flags left unset stay None and are ignored."""
    get = lambda name: getattr(args, name, None)
    layer: Dict[str, Dict[str, Any]] = {
        "train": {
            "seed": get("seed"),
            "lookback": get("lookback"),
            "horizon": get("horizon"),
            "quantiles": get("quantiles"),
            "epochs": get("epochs"),
            "batch_size": get("batch_size"),
            "learning_rate": get("lr"),
            "patience": get("patience"),
            "sort_quantiles": get("sort_quantiles"),
        },
        "data": {"end_date": get("end_date"), "folds": get("folds")},
        "search": {"budget": get("budget"), "jobs": get("jobs")},
        "transfer": {
            "budget_hours": get("budget_hours"),
            "appended_blocks": get("appended_blocks"),
            "unfreeze_top": get("unfreeze_top"),
            "dtw_window_days": get("window_days"),
            "dtw_band": get("band"),
        },
        "synth": {
            "seed": get("seed"),
            "site_id": get("site_id"),
            "start": get("start"),
            "months": get("months"),
            "hour_shift": get("hour_shift"),
            "scale": get("scale"),
            "sessions_per_day": get("sessions_per_day"),
        },
    }
    if args.command == "transfer":
        # Target lookback/horizon live in the transfer section
        layer["transfer"]["lookback"] = layer["train"].pop("lookback")
        layer["transfer"]["horizon"] = layer["train"].pop("horizon")
    return layer


def load_config(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    file_layer = None
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        file_layer = read_json(path)
    config = resolve_config(default_config(), file_layer, flag_config(args))
    validate_config(config)
    return config


def output_dir(args: argparse.Namespace) -> Path:
    return Path(args.out) if getattr(args, "out", None) else OUTPUT_ROOT / args.command


# =========================
# Subcommands
# =========================
def cmd_synth(args, config, out: Path, manifest: RunManifest) -> None:
    holidays = []
    if args.holidays:
        manifest.add_input(args.holidays)
        holidays = list(load_holidays(args.holidays)["date"])
    synth = config["synth"]
    profile = profile_from_config(synth, holidays)
    sessions = generate_sessions(profile, synth["start"], int(synth["months"]))
    manifest.add_artifact("sessions", write_sessions(out / "sessions.csv", sessions))
    print(f"Generated {len(sessions)} sessions for {profile.site_id} -> {out / 'sessions.csv'}")


def cmd_ingest(args, config, out: Path, manifest: RunManifest) -> None:
    manifest.add_input(args.sessions)
    sessions = load_sessions(args.sessions, end_date=config["data"]["end_date"])
    holidays = []
    if args.holidays:
        manifest.add_input(args.holidays)
        holidays = list(load_holidays(args.holidays)["date"])
    sites = args.site or sorted({s.site_id for s in sessions})
    data = config["data"]
    for site in sites:
        frame, anomalies = build_feature_frame(
            sessions, site, holidays, anomaly_window=int(data["anomaly_window"]), anomaly_k=float(data["anomaly_k"])
        )
        path = save_frame(frame, out / f"{site}.frame.csv", extra={"anomalies_clipped": len(anomalies)})
        manifest.add_artifact(f"frame:{site}", path)
        if anomalies:
            log = pd.DataFrame(
                [{"timestamp": a.timestamp.isoformat(), "original": a.original, "clipped": a.clipped} for a in anomalies]
            )
            manifest.add_artifact(f"anomalies:{site}", write_csv(out / f"{site}.anomalies.csv", log))
        print(f"{site}: {len(frame)} hours, {len(anomalies)} clipped -> {path}")


def _frame_input(path: str, manifest: RunManifest):
    manifest.add_input(path)
    manifest.add_input(str(path) + ".meta.json")
    return load_frame(path)


def _emit_evaluation(evaluation, quantiles, config, out: Path, manifest: RunManifest) -> None:
    stamps, actuals, predictions = evaluation_series(evaluation)
    interval = IntervalSpec(*config["train"]["interval"])
    for name, path in emit_plot_data(stamps, actuals, predictions, quantiles, out, interval).items():
        manifest.add_artifact(name, path)
    print(evaluation.report.format_table(title="Held-out test"))
    if evaluation.baseline_nd is not None:
        print(f"Seasonal-naive ND: {evaluation.baseline_nd:.4f}")


def cmd_train(args, config, out: Path, manifest: RunManifest) -> None:
    frame = _frame_input(args.frame, manifest)
    write_json(out / "config.json", config)
    result = final_fit_and_test(frame, default_hyperparameters(config), config, out_dir=out)
    for name in ("best.ckpt", "report.json", "forecasts.csv", "config.json"):
        manifest.add_artifact(name, out / name)
    _emit_evaluation(result.evaluation, result.model.config.quantiles, config, out, manifest)


def cmd_cv(args, config, out: Path, manifest: RunManifest) -> None:
    frame = _frame_input(args.frame, manifest)
    write_json(out / "config.json", config)
    cv, final = run_search(frame, config, out_dir=out)
    for name in ("best.ckpt", "report.json", "forecasts.csv", "config.json", "folds.json"):
        manifest.add_artifact(name, out / name)
    print(f"Best trial {cv.best.trial_id}: {cv.best.hyperparameters}")
    _emit_evaluation(final.evaluation, final.model.config.quantiles, config, out, manifest)


def _pipeline_of(model) -> FeaturePipeline:
    payload = model.metadata.get("pipeline")
    if payload is None:
        raise DataError("checkpoint carries no feature pipeline")
    return FeaturePipeline.from_dict(payload)


def _sized(config, model) -> Dict[str, Dict[str, Any]]:
    sized = copy.deepcopy(config)
    sized["train"]["lookback"] = model.config.lookback
    sized["train"]["horizon"] = model.config.horizon
    sized["train"]["quantiles"] = list(model.config.quantiles)
    return sized


def cmd_evaluate(args, config, out: Path, manifest: RunManifest) -> None:
    manifest.add_input(args.ckpt)
    model = load_checkpoint(args.ckpt)
    frame = _frame_input(args.frame, manifest)
    pipeline = _pipeline_of(model)
    sized = _sized(config, model)
    test_start = held_out_start(frame, sized)
    inputs = pipeline.transform(frame, protected_from=test_start)
    interval = IntervalSpec(*config["train"]["interval"])
    evaluation = evaluate_model(model, pipeline, inputs, test_start, interval, bool(config["train"]["sort_quantiles"]))
    manifest.add_artifact("report", write_json(out / "report.json", evaluation.report_payload()))
    manifest.add_artifact("forecasts", write_csv(out / "forecasts.csv", evaluation.forecasts))
    _emit_evaluation(evaluation, model.config.quantiles, sized, out, manifest)


def cmd_dtw(args, config, out: Path, manifest: RunManifest) -> None:
    target = _frame_input(args.target, manifest)
    candidates = [_frame_input(path, manifest) for path in args.candidates]
    transfer = config["transfer"]
    ranked = rank_sources(
        target, candidates,
        window_days=int(transfer["dtw_window_days"]),
        max_points=transfer["dtw_max_points"],
        band=transfer["dtw_band"],
    )
    payload = {"target": target.site_id, "ranking": [r.to_dict() for r in ranked]}
    manifest.add_artifact("ranking", write_json(out / "ranking.json", payload))
    for position, r in enumerate(ranked, start=1):
        print(f"{position}. {r.source_id}  DTW={r.distance:.4f}")


def cmd_transfer(args, config, out: Path, manifest: RunManifest) -> None:
    manifest.add_input(args.source)
    source = load_checkpoint(args.source)
    target = _frame_input(args.target, manifest)
    plan = TransferPlan.from_config(config, source, source_ref=Path(args.source).name)
    outcome = transfer_experiment(source, target, config, plan, compare_scratch=not args.no_scratch, out_dir=out)
    for name in ("transfer.ckpt", "report.json", "parameters.json", "forecasts.csv"):
        manifest.add_artifact(name, out / name)
    print(outcome.transfer.report.format_table(title="Transfer"))
    if outcome.scratch is not None:
        print(outcome.scratch.report.format_table(title="From scratch"))
    p = outcome.parameters
    print(f"Trainable {p['trainable']} / frozen {p['frozen']} / scratch total {p['scratch_total']} "
          f"({p['learnable_reduction_pct']:.1f}% fewer learnable parameters)")


def cmd_forecast(args, config, out: Path, manifest: RunManifest) -> None:
    manifest.add_input(args.ckpt)
    model = load_checkpoint(args.ckpt)
    frame = _frame_input(args.frame, manifest)
    pipeline = _pipeline_of(model)
    inputs = pipeline.transform(frame)

    origin = pd.Timestamp(args.origin)
    origin = origin.tz_localize("UTC") if origin.tzinfo is None else origin.tz_convert("UTC")
    positions = np.flatnonzero(inputs.timestamps == origin)
    if positions.size == 0:
        raise DataError(f"origin {origin} is not an hour of frame {args.frame}")
    end = int(positions[0]) + 1
    p = model.config.lookback
    if end < p:
        raise DataError(f"origin {origin} leaves {end} hours of history; lookback needs {p}")

    values = model.predict(inputs.features[end - p:end], np.asarray(inputs.target[end - p:end]),
                           inputs.categorical[end - p:end])[0]
    forecast = QuantileForecast(pipeline.inverse_target(values), model.config.quantiles, origin)
    if config["train"]["sort_quantiles"]:
        forecast = sort_quantiles(forecast)
    table = forecast.to_frame()
    table["origin"] = [ts.isoformat() for ts in table["origin"]]
    table["timestamp"] = [ts.isoformat() for ts in table["timestamp"]]
    manifest.add_artifact("forecasts", write_csv(out / "forecasts.csv", table))
    print(table.to_string(index=False))


def cmd_sweep(args, config, out: Path, manifest: RunManifest) -> None:
    manifest.add_input(args.source)
    source = load_checkpoint(args.source)
    target = _frame_input(args.target, manifest)
    kwargs = {"budgets": args.budgets} if args.budgets else {}
    table = data_size_sweep(source, target, config, compare_scratch=args.scratch, out_dir=out, **kwargs)
    manifest.add_artifact("sweep.csv", out / "sweep.csv")
    manifest.add_artifact("sweep.json", out / "sweep.json")
    print(table.to_string(index=False))


COMMANDS: Dict[str, Callable] = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "cv": cmd_cv,
    "evaluate": cmd_evaluate,
    "dtw": cmd_dtw,
    "transfer": cmd_transfer,
    "forecast": cmd_forecast,
    "sweep": cmd_sweep,
}


# =========================
# Replay
# =========================
def _with_out(argv: Sequence[str], out: str) -> List[str]:
    argv = list(argv)
    if "--out" in argv:
        position = argv.index("--out")
        argv[position + 1] = out
    else:
        argv += ["--out", out]
    return argv


def replay(args) -> int:
    manifest = RunManifest.read(args.manifest)
    manifest.verify_inputs()
    argv = _with_out(manifest.argv, args.out)
    replayed = build_parser().parse_args(argv)
    config = load_config(replayed)
    if config != manifest.config:
        raise DataError("resolved configuration differs from the recorded run; refusing to replay")
    logger.info(f"🔍 Replaying '{manifest.subcommand}' into {args.out}")
    return run(replayed, argv)


# =========================
# Entry Point
# =========================
def run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = load_config(args)
    out = output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, list(argv), config, int(config["train"]["seed"]))
    if getattr(args, "config", None):
        manifest.add_input(args.config)
    COMMANDS[args.command](args, config, out, manifest)
    manifest.write(out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, dispatch the subcommand and map failures to exit codes.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e))
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    setup_logger(verbose=getattr(args, "verbose", False))
    try:
        if args.command == "replay":
            return replay(args)
        return run(args, argv)
    except (UsageError, ValueError) as e:
        if isinstance(e, DataError):
            logger.debug("Data error", exc_info=True)
            print(f"❌ Data error: {e}")
            return EXIT_DATA
        logger.debug("Usage error", exc_info=True)
        print(f"❌ Usage error: {e}")
        return EXIT_USAGE
    except FileNotFoundError as e:
        logger.debug("Missing file", exc_info=True)
        print(f"❌ {e}")
        return EXIT_DATA
    except NumericalError as e:
        logger.debug("Numerical failure", exc_info=True)
        print(f"❌ Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (GraphError, FrozenParameterError) as e:
        logger.debug("Training failure", exc_info=True)
        print(f"❌ Training failed: {e}")
        return EXIT_NUMERICAL
