"""
Training, blocked cross-validation, final fit and held-out evaluation.

Protocol:
    1. hold out the last test_frac of hours; nothing below reads them
    2. random-search trials, each trained on every fold's train block and
       scored by mean validation pinball
    3. retrain the best trial on all non-test hours
    4. release the test targets and score the tail on the kWh scale
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..autodiff.optim import Adam
from ..data.features import FeatureFrame
from ..data.pipeline import FeaturePipeline, ModelInputs
from ..data.windows import SplitPlan, WindowSample, make_test_windows, make_windows, plan_splits, stack_windows
from ..metrics.evaluation import IntervalSpec, MetricsReport, evaluate_forecasts, mean_pinball, normalized_deviation, pinball_loss_tensor
from ..model.checkpoint import save_checkpoint
from ..model.tcn import TcnConfig, TcnModel, quantile_label
from ..utils.errors import DataError, NumericalError
from ..utils.io import write_csv, write_json
from ..utils.seeding import make_rng
from .search import SearchSpace, Trial, sample_trials

logger = logging.getLogger("ChargeCast")

SEASON_HOURS = 168
PREDICT_BATCH = 256


# ==================== CONFIG ====================

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 20
    seed: int = 0
    quantiles: Tuple[float, ...] = (0.05, 0.50, 0.90)
    lookback: int = 168
    horizon: int = 24

    def __post_init__(self):
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.epochs > 0 and self.patience >= self.epochs:
            raise ValueError(f"patience ({self.patience}) must be < epochs ({self.epochs})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    @classmethod
    def from_config(cls, config: Dict[str, Dict[str, Any]]) -> "TrainConfig":
        train = config["train"]
        return cls(
            epochs=int(train["epochs"]),
            batch_size=int(train["batch_size"]),
            learning_rate=float(train["learning_rate"]),
            patience=int(train["patience"]),
            seed=int(train["seed"]),
            quantiles=tuple(train["quantiles"]),
            lookback=int(train["lookback"]),
            horizon=int(train["horizon"]),
        )

    def with_epochs(self, epochs: int) -> "TrainConfig":
        """Same config with a new epoch budget; patience is capped below it."""
        return replace(self, epochs=epochs, patience=max(0, min(self.patience, epochs - 1)))


def default_hyperparameters(config: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
    tcn, train = config["tcn"], config["train"]
    return {
        "num_blocks": int(tcn["num_blocks"]),
        "channels": int(tcn["channels"]),
        "kernel_size": int(tcn["kernel_size"]),
        "dropout": float(tcn["dropout"]),
        "learning_rate": float(train["learning_rate"]),
        "batch_size": int(train["batch_size"]),
    }


def build_model_config(
    hyperparameters: Dict[str, Any],
    inputs: ModelInputs,
    train_config: TrainConfig,
    head_hidden: int = 32,
    final_activation: str = "relu",
) -> TcnConfig:
    blocks = int(hyperparameters["num_blocks"])
    return TcnConfig(
        input_channels=inputs.input_channels,
        kernel_size=int(hyperparameters["kernel_size"]),
        num_blocks=blocks,
        channels=[int(hyperparameters["channels"])] * blocks,
        dropout=float(hyperparameters["dropout"]),
        lookback=train_config.lookback,
        horizon=train_config.horizon,
        quantiles=train_config.quantiles,
        head_hidden=head_hidden,
        embedding_vocab_sizes=list(inputs.embedding_vocab_sizes),
        final_activation=final_activation,
    )


# ==================== TRAINING ====================

@dataclass
class TrainResult:
    model: TcnModel
    curves: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: Optional[float] = None
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.curves)

    def curves_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.curves, columns=["epoch", "train_loss", "val_loss"])


def predict_windows(model: TcnModel, windows: Sequence[WindowSample], batch_size: int = PREDICT_BATCH) -> np.ndarray:
    """Normalized-scale forecasts (N, δ, |Q|) for a list of windows."""
    outputs = []
    for s in range(0, len(windows), batch_size):
        batch = stack_windows(windows[s:s + batch_size])
        outputs.append(model.predict(batch["features"], batch["past_target"], batch["categorical"]))
    return np.concatenate(outputs, axis=0)


def window_pinball(model: TcnModel, windows: Sequence[WindowSample], quantiles: Sequence[float]) -> float:
    predictions = predict_windows(model, windows)
    targets = np.stack([w.horizon_target for w in windows])
    return mean_pinball(targets, predictions, quantiles)


def train(
    model: TcnModel,
    windows: Sequence[WindowSample],
    config: TrainConfig,
    val_windows: Optional[Sequence[WindowSample]] = None,
    lr_scale: Optional[Mapping[str, float]] = None,
) -> TrainResult:
    """
    Mini-batch Adam on the mean multi-quantile pinball loss.

    Only parameters with requires_grad are updated; `lr_scale` multiplies
    the learning rate of the named ones. Early stopping watches
    the validation pinball when validation windows are given, otherwise
    the training loss; the best weights are restored before returning.

    Raises:
        DataError: if there are no training windows
        NumericalError: if the loss becomes NaN or infinite
    """
    if config.epochs == 0:
        return TrainResult(model)
    if not windows:
        raise DataError("training needs at least one window")

    batch = stack_windows(windows)
    n = len(windows)
    params = model.named_parameters(trainable_only=True)
    optimizer = Adam(params, lr=config.learning_rate, lr_scale=lr_scale)
    shuffle_rng = make_rng(config.seed, "shuffle")
    dropout_rng = make_rng(config.seed, "dropout")
    quantiles = list(model.config.quantiles)

    result = TrainResult(model)
    best_state = model.state_dict()
    best_loss = math.inf
    wait = 0
    last_finite = 0

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            optimizer.zero_grad()
            predictions = model.forward_batch(
                batch["features"][idx], batch["past_target"][idx], batch["categorical"][idx],
                training=True, rng=dropout_rng,
            )
            loss = pinball_loss_tensor(predictions, batch["horizon_target"][idx], quantiles)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"training loss diverged at epoch {epoch} (last finite epoch: {last_finite})",
                    last_finite_epoch=last_finite,
                )
            loss.backward()
            optimizer.step()
            total += value * len(idx)

        train_loss = total / n
        val_loss = window_pinball(model, val_windows, quantiles) if val_windows else None
        monitored = val_loss if val_windows else train_loss
        if not math.isfinite(monitored):
            raise NumericalError(
                f"monitored loss is not finite at epoch {epoch} (last finite epoch: {last_finite})",
                last_finite_epoch=last_finite,
            )
        last_finite = epoch
        result.curves.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug(f"Epoch {epoch}: train {train_loss:.6f}" + (f", val {val_loss:.6f}" if val_loss is not None else ""))

        if monitored < best_loss:
            best_loss = monitored
            best_state = model.state_dict()
            result.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                result.stopped_early = epoch < config.epochs
                logger.info(f"Early stop at epoch {epoch}; restoring epoch {result.best_epoch} ({best_loss:.6f})")
                break

    model.load_state_dict(best_state)
    result.best_loss = best_loss
    return result


# ==================== CROSS-VALIDATION ====================

@dataclass
class TrialResult:
    trial_id: int
    hyperparameters: Dict[str, Any]
    fold_losses: List[float]
    best_epochs: List[int]
    parameter_count: int
    curves: List[List[Dict[str, Any]]] = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        losses = np.asarray(self.fold_losses, dtype=np.float64)
        return float(np.mean(losses)) if np.all(np.isfinite(losses)) else math.inf

    @property
    def mean_best_epoch(self) -> int:
        return max(1, int(round(float(np.mean(self.best_epochs))))) if self.best_epochs else 1

    def selection_key(self) -> Tuple[float, int, int]:
        return (self.mean_loss, self.parameter_count, self.trial_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trial_id": self.trial_id,
            "hyperparameters": self.hyperparameters,
            "fold_losses": self.fold_losses,
            "mean_loss": self.mean_loss,
            "best_epochs": self.best_epochs,
            "parameter_count": self.parameter_count,
        }


@dataclass
class CVResult:
    best: TrialResult
    trials: List[TrialResult]
    plan: SplitPlan

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plan": self.plan.to_dict(),
            "best_trial": self.best.trial_id,
            "trials": [t.to_dict() for t in self.trials],
        }


def _run_trial(
    inputs: Sequence[ModelInputs],
    plan: SplitPlan,
    trial: Trial,
    train_config: TrainConfig,
    head_hidden: int,
    final_activation: str,
) -> TrialResult:
    hp = trial.hyperparameters
    config = replace(train_config, learning_rate=float(hp["learning_rate"]), batch_size=int(hp["batch_size"]))
    p, delta = config.lookback, config.horizon

    losses, best_epochs, curves = [], [], []
    parameter_count = 0
    for fold, fold_data in zip(plan.folds, inputs):
        model_config = build_model_config(hp, fold_data, config, head_hidden, final_activation)
        # Same init seed for every trial so identical hyperparameters give identical losses
        model = TcnModel(model_config, seed=config.seed)
        parameter_count = model.parameter_count()
        train_windows = make_windows(fold_data, p, delta, start=fold.train[0], stop=fold.train[1])
        val_windows = make_windows(fold_data, p, delta, start=fold.validation[0], stop=fold.validation[1])
        if config.epochs == 0:
            losses.append(window_pinball(model, val_windows, config.quantiles))
            best_epochs.append(0)
            curves.append([])
            continue
        result = train(model, train_windows, config, val_windows)
        losses.append(float(result.best_loss))
        best_epochs.append(result.best_epoch)
        curves.append(result.curves)

    trial_result = TrialResult(trial.trial_id, dict(hp), losses, best_epochs, parameter_count, curves)
    logger.info(
        f"🔍 Trial {trial.trial_id}: mean validation pinball {trial_result.mean_loss:.6f} "
        f"over {len(losses)} folds ({parameter_count} parameters)"
    )
    return trial_result


def _run_trial_packed(args) -> TrialResult:
    return _run_trial(*args)


def cross_validate(
    inputs: Union[ModelInputs, Sequence[ModelInputs]],
    plan: SplitPlan,
    trials: Sequence[Trial],
    train_config: TrainConfig,
    head_hidden: int = 32,
    final_activation: str = "relu",
    jobs: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
) -> CVResult:
    """
    Score every trial by its mean validation pinball across folds.

    The winner minimizes (mean loss, parameter count, trial id).

    Args:
        inputs: Scaled site arrays with the test tail guarded, either shared by
            every fold or one per fold (fitted on that fold's training rows)
        plan: Blocked split plan; folds never reach the test range
        trials: Sampled hyperparameter sets
        train_config: Base training settings (lr and batch come from each trial)
        head_hidden: Hidden width of the quantile heads
        final_activation: Residual block output activation
        jobs: Worker processes for independent trials
        out_dir: When set, folds.json and trial-<k>/curves.csv are written here
    """
    if not trials:
        raise ValueError("cross-validation needs at least one trial")
    per_fold = [inputs] * plan.fold_count if isinstance(inputs, ModelInputs) else list(inputs)
    if len(per_fold) != plan.fold_count:
        raise ValueError(f"got inputs for {len(per_fold)} folds, the plan has {plan.fold_count}")
    packed = [(per_fold, plan, t, train_config, head_hidden, final_activation) for t in trials]
    if jobs > 1 and len(trials) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finished = list(pool.map(_run_trial_packed, packed))
    else:
        finished = [_run_trial_packed(args) for args in packed]

    by_id = {r.trial_id: r for r in finished}
    ordered = [by_id[t.trial_id] for t in trials]
    best = min(ordered, key=TrialResult.selection_key)
    result = CVResult(best, ordered, plan)
    logger.info(f"✅ Best trial {best.trial_id}: {best.hyperparameters} (mean pinball {best.mean_loss:.6f})")

    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(out_dir / "folds.json", result.to_dict())
        for trial in ordered:
            rows = [
                {"fold": f, **row} for f, fold_curve in enumerate(trial.curves) for row in fold_curve
            ]
            write_csv(
                out_dir / f"trial-{trial.trial_id}" / "curves.csv",
                pd.DataFrame(rows, columns=["fold", "epoch", "train_loss", "val_loss"]),
            )
    return result


# ==================== BASELINE ====================

def seasonal_naive(history: np.ndarray, delta: int, season: int = SEASON_HOURS) -> np.ndarray:
    """
    Same hour last week: ŷ_{T+i} = y_{T+i-season}, repeating the last season past one season ahead.

    Raises:
        DataError: if fewer than season + δ hours of history are available
    """
    history = np.asarray(history, dtype=np.float64)
    if len(history) < season + delta:
        raise DataError(f"seasonal naive needs {season + delta} hours of history, got {len(history)}")
    last_season = history[-season:]
    return np.array([last_season[i % season] for i in range(delta)])


# ==================== EVALUATION ====================

@dataclass
class EvaluationResult:
    report: MetricsReport
    forecasts: pd.DataFrame
    actuals: np.ndarray
    predictions: np.ndarray
    origins: List[pd.Timestamp]
    baseline_nd: Optional[float] = None

    def report_payload(self) -> Dict[str, Any]:
        return {
            "metrics": self.report.to_dict(),
            "baseline": {"seasonal_naive_nd": self.baseline_nd},
            "windows": len(self.origins),
            "first_origin": self.origins[0].isoformat() if self.origins else None,
            "last_origin": self.origins[-1].isoformat() if self.origins else None,
        }


def forecasts_table(
    origins: Sequence[pd.Timestamp], predictions: np.ndarray, actuals: Optional[np.ndarray], quantiles: Sequence[float]
) -> pd.DataFrame:
    """Long table with one row per (origin, step): origin, step, q.., actual."""
    n, delta, _ = predictions.shape
    table = pd.DataFrame({
        "origin": np.repeat([o.isoformat() for o in origins], delta),
        "step": np.tile(np.arange(1, delta + 1), n),
    })
    for i, q in enumerate(quantiles):
        table[quantile_label(q)] = predictions[:, :, i].ravel()
    if actuals is not None:
        table["actual"] = np.asarray(actuals).ravel()
    return table


def evaluate_model(
    model: TcnModel,
    pipeline: FeaturePipeline,
    inputs: ModelInputs,
    test_start: int,
    interval: IntervalSpec = IntervalSpec(),
    sort: bool = False,
) -> EvaluationResult:
    """Score non-overlapping horizons tiling the test tail; releases the test targets."""
    cfg = model.config
    inputs.release_test_targets()
    windows = make_test_windows(inputs, cfg.lookback, cfg.horizon, test_start)
    predictions = pipeline.inverse_target(predict_windows(model, windows))
    actuals = np.stack([w.horizon_kwh for w in windows])
    report = evaluate_forecasts(actuals, predictions, cfg.quantiles, interval, sort=sort)
    if sort:
        predictions = np.sort(predictions, axis=-1)

    baseline_nd = None
    history = np.asarray(inputs.target_kwh)
    if windows[0].horizon_start >= SEASON_HOURS + cfg.horizon:
        naive = np.stack([seasonal_naive(history[:w.horizon_start], cfg.horizon) for w in windows])
        baseline_nd = normalized_deviation(actuals, naive)
    else:
        logger.warning("⚠️ Not enough history before the test range for the seasonal-naive baseline")

    origins = [w.origin for w in windows]
    logger.info(f"✅ Evaluated {len(windows)} test windows\n{report.format_table()}")
    return EvaluationResult(report, forecasts_table(origins, predictions, actuals, cfg.quantiles),
                            actuals, predictions, origins, baseline_nd)


# ==================== FINAL FIT ====================

@dataclass
class FinalResult:
    model: TcnModel
    pipeline: FeaturePipeline
    evaluation: EvaluationResult
    train_result: TrainResult
    test_start: int

    @property
    def report(self) -> MetricsReport:
        return self.evaluation.report


def fit_pipeline(frame: FeatureFrame, config: Dict[str, Dict[str, Any]], train_end: int, test_start: Optional[int]) -> FeaturePipeline:
    data = config["data"]
    return FeaturePipeline.fit(
        frame, train_end, test_start,
        use_station_activity=bool(data["use_station_activity"]),
        station_code_dim=int(data["station_code_dim"]),
        station_encoder_epochs=int(data["station_encoder_epochs"]),
        station_encoder_lr=float(data["station_encoder_lr"]),
        seed=int(config["train"]["seed"]),
    )


def held_out_start(frame: FeatureFrame, config: Dict[str, Dict[str, Any]]) -> int:
    """Start row of the held-out test tail."""
    train = config["train"]
    plan = plan_splits(len(frame), float(config["data"]["test_frac"]), folds=1,
                       min_segment=int(train["lookback"]) + int(train["horizon"]))
    return plan.test_start


def final_fit_and_test(
    frame: FeatureFrame,
    hyperparameters: Dict[str, Any],
    config: Dict[str, Dict[str, Any]],
    epochs: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> FinalResult:
    """
    Retrain on every non-test hour, then evaluate the held-out tail.

    The test targets stay guarded during pipeline fitting and training and
    are released only for evaluation.

    Args:
        frame: Raw feature frame of one site
        hyperparameters: Trial hyperparameters (see default_hyperparameters)
        config: Resolved configuration
        epochs: Epoch budget for the retrain (defaults to train.epochs)
        out_dir: When set, best.ckpt, report.json and forecasts.csv are written here
    """
    base = TrainConfig.from_config(config)
    train_config = replace(
        base, learning_rate=float(hyperparameters["learning_rate"]), batch_size=int(hyperparameters["batch_size"])
    )
    if epochs is not None:
        train_config = train_config.with_epochs(int(epochs))

    test_start = held_out_start(frame, config)
    pipeline = fit_pipeline(frame, config, train_end=test_start, test_start=test_start)
    inputs = pipeline.transform(frame, protected_from=test_start)

    tcn = config["tcn"]
    model_config = build_model_config(hyperparameters, inputs, train_config, int(tcn["head_hidden"]), tcn["final_activation"])
    model = TcnModel(model_config, seed=train_config.seed, metadata={
        "site_id": frame.site_id,
        "pipeline": pipeline.to_dict(),
        "pipeline_hash": pipeline.fingerprint(),
        "feature_names": inputs.feature_names,
        "hyperparameters": dict(hyperparameters),
        "test_start": test_start,
    })
    windows = make_windows(inputs, train_config.lookback, train_config.horizon, start=0, stop=test_start)
    logger.info(f"Retraining on {len(windows)} windows for up to {train_config.epochs} epochs")
    train_result = train(model, windows, train_config)

    interval = IntervalSpec(*config["train"]["interval"])
    evaluation = evaluate_model(model, pipeline, inputs, test_start, interval, bool(config["train"]["sort_quantiles"]))
    result = FinalResult(model, pipeline, evaluation, train_result, test_start)

    if out_dir is not None:
        write_final_outputs(result, hyperparameters, Path(out_dir))
    return result


def write_final_outputs(result: FinalResult, hyperparameters: Dict[str, Any], out_dir: Path) -> Dict[str, Path]:
    payload = result.evaluation.report_payload()
    payload.update({
        "hyperparameters": dict(hyperparameters),
        "epochs_run": result.train_result.epochs_run,
        "best_epoch": result.train_result.best_epoch,
        "test_start": result.evaluation.origins[0].isoformat() if result.evaluation.origins else None,
        "parameters": result.model.parameter_report(),
    })
    artifacts = {
        "checkpoint": save_checkpoint(result.model, out_dir / "best.ckpt"),
        "report": write_json(out_dir / "report.json", payload),
        "forecasts": write_csv(out_dir / "forecasts.csv", result.evaluation.forecasts),
    }
    if result.train_result.curves:
        artifacts["curves"] = write_csv(out_dir / "curves.csv", result.train_result.curves_frame())
    for name, path in artifacts.items():
        logger.info(f"✅ Wrote {name}: {path}")
    return artifacts


def fold_inputs(frame: FeatureFrame, config: Dict[str, Dict[str, Any]], plan: SplitPlan) -> List[ModelInputs]:
    """One pipeline per fold, fitted on that fold's training rows; the test tail stays guarded."""
    inputs = []
    for fold in plan.folds:
        pipeline = fit_pipeline(frame, config, train_end=fold.train[1], test_start=plan.test_start)
        inputs.append(pipeline.transform(frame, protected_from=plan.test_start))
    return inputs


def run_search(
    frame: FeatureFrame,
    config: Dict[str, Dict[str, Any]],
    out_dir: Optional[Union[str, Path]] = None,
    budget: Optional[int] = None,
) -> Tuple[CVResult, FinalResult]:
    """Random search with blocked CV, then final fit of the winner on the non-test hours."""
    train_config = TrainConfig.from_config(config)
    data = config["data"]
    plan = plan_splits(len(frame), float(data["test_frac"]), int(data["folds"]),
                       min_segment=train_config.lookback + train_config.horizon)
    inputs = fold_inputs(frame, config, plan)

    space = SearchSpace.from_config(config["search"], seed=train_config.seed)
    trials = sample_trials(space, budget)
    tcn = config["tcn"]
    cv = cross_validate(
        inputs, plan, trials, train_config,
        head_hidden=int(tcn["head_hidden"]), final_activation=tcn["final_activation"],
        jobs=int(config["search"]["jobs"]), out_dir=out_dir,
    )
    epochs = cv.best.mean_best_epoch if train_config.epochs > 0 else 0
    final = final_fit_and_test(frame, cv.best.hyperparameters, config, epochs=epochs, out_dir=out_dir)
    return cv, final
