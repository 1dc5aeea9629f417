"""
Head-replacement transfer learning.

The source trunk (embeddings and residual blocks) is copied and frozen,
new residual blocks are stacked on top with continued dilation doubling,
and fresh quantile heads are sized for the target horizon and levels.
When the target feature width differs from the source, a 1x1 adapter
convolution maps target columns onto the source input layout.
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..data.features import FeatureFrame
from ..data.pipeline import FeaturePipeline, ModelInputs
from ..data.windows import make_windows
from ..metrics.evaluation import IntervalSpec
from ..model.checkpoint import save_checkpoint
from ..model.tcn import TcnConfig, TcnModel
from ..training.harness import (
    EvaluationResult,
    TrainConfig,
    TrainResult,
    evaluate_model,
    fit_pipeline,
    held_out_start,
    train,
)
from ..utils.errors import DataError, FrozenParameterError, ShapeError
from ..utils.io import write_csv, write_json
from ..utils.seeding import derive_seed

logger = logging.getLogger("ChargeCast")

SWEEP_BUDGETS = (336, 720, 2160, 4320)
SWEEP_SETTINGS = ((168, 24), (72, 24), (24, 4), (24, 1))
ADAPTER_NOISE = 0.01
# Appended blocks start close to the identity on the source trunk output
APPENDED_BRANCH_SCALE = 0.01


# ==================== PLAN ====================

@dataclass
class TransferPlan:
    """
    What to keep, what to add and how to fine-tune.

    New parameters (heads, appended blocks, adapter) train at
    `train_config.learning_rate`; source weights released by `unfreeze_top`
    train at `pretrained_lr_factor` times that rate.
    """

    horizon: int = 24
    quantiles: Tuple[float, ...] = (0.05, 0.50, 0.90)
    lookback: int = 72
    appended_blocks: int = 1
    appended_channels: int = 32
    unfreeze_top: int = 0
    pretrained_lr_factor: float = 0.1
    budget_hours: int = 336
    head_hidden: Optional[int] = None
    allow_adapter: bool = True
    train_config: TrainConfig = field(default_factory=TrainConfig)
    source_ref: Optional[str] = None

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in self.quantiles)
        if self.appended_blocks < 0 or self.unfreeze_top < 0:
            raise ValueError("appended_blocks and unfreeze_top must be >= 0")
        if self.pretrained_lr_factor < 0:
            raise ValueError("pretrained_lr_factor must be >= 0")
        if self.budget_hours < 1:
            raise ValueError("budget_hours must be >= 1")
        if self.train_config.horizon != self.horizon or self.train_config.lookback != self.lookback:
            self.train_config = replace(self.train_config, horizon=self.horizon, lookback=self.lookback)
        if self.train_config.quantiles != self.quantiles:
            self.train_config = replace(self.train_config, quantiles=self.quantiles)

    @classmethod
    def from_config(
        cls, config: Dict[str, Dict[str, Any]], source: TcnModel, source_ref: Optional[str] = None
    ) -> "TransferPlan":
        """New parameters train at the source model's rate, released source weights at lr_factor x that."""
        transfer = config["transfer"]
        base = TrainConfig.from_config(config)
        source_lr = float(source.metadata.get("hyperparameters", {}).get("learning_rate", base.learning_rate))
        return cls(
            horizon=int(transfer["horizon"]),
            quantiles=tuple(config["train"]["quantiles"]),
            lookback=int(transfer["lookback"]),
            appended_blocks=int(transfer["appended_blocks"]),
            appended_channels=int(transfer["appended_channels"]),
            unfreeze_top=int(transfer["unfreeze_top"]),
            pretrained_lr_factor=float(transfer["lr_factor"]),
            budget_hours=int(transfer["budget_hours"]),
            train_config=replace(base, learning_rate=source_lr),
            source_ref=source_ref,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizon": self.horizon,
            "quantiles": list(self.quantiles),
            "lookback": self.lookback,
            "appended_blocks": self.appended_blocks,
            "appended_channels": self.appended_channels,
            "unfreeze_top": self.unfreeze_top,
            "budget_hours": self.budget_hours,
            "learning_rate": self.train_config.learning_rate,
            "pretrained_lr_factor": self.pretrained_lr_factor,
            "epochs": self.train_config.epochs,
            "source": self.source_ref,
        }


# ==================== MODEL SURGERY ====================

def _target_config(source: TcnModel, plan: TransferPlan, target_input_channels: int) -> TcnConfig:
    cfg = copy.deepcopy(source.config)
    channels = list(cfg.channels) + [plan.appended_channels] * plan.appended_blocks
    dilations = list(cfg.dilations)
    for _ in range(plan.appended_blocks):
        dilations.append(dilations[-1] * 2)

    adapter_width = cfg.adapter_width
    if target_input_channels != cfg.input_channels:
        if not plan.allow_adapter:
            raise ShapeError(
                f"target has {target_input_channels} feature columns, source expects {cfg.input_channels}; "
                f"enable the adapter to transfer across feature widths"
            )
        if cfg.adapter_width is not None:
            raise ShapeError("source already carries an input adapter; stacking adapters is not supported")
        adapter_width = cfg.trunk_input_width

    return TcnConfig(
        input_channels=target_input_channels,
        kernel_size=cfg.kernel_size,
        num_blocks=len(channels),
        channels=channels,
        dilations=dilations,
        dropout=cfg.dropout,
        lookback=plan.lookback,
        horizon=plan.horizon,
        quantiles=plan.quantiles,
        head_hidden=plan.head_hidden or cfg.head_hidden,
        embedding_vocab_sizes=list(cfg.embedding_vocab_sizes),
        final_activation=cfg.final_activation,
        adapter_width=adapter_width,
    )


def _adapter_init(
    model: TcnModel,
    source: TcnModel,
    target_names: Optional[Sequence[str]],
    seed: int,
) -> np.ndarray:
    """Identity on columns shared by name (plus embeddings and past target), small noise elsewhere."""
    src_cfg, cfg = source.config, model.config
    rng = np.random.default_rng(derive_seed(seed, "init:adapter.weight"))
    weight = rng.uniform(-ADAPTER_NOISE, ADAPTER_NOISE, size=(1, cfg.trunk_input_width, cfg.adapter_width))

    source_names = list(source.metadata.get("feature_names") or [])
    if target_names is not None and source_names:
        positions = {name: i for i, name in enumerate(source_names)}
        for t, name in enumerate(target_names):
            if name in positions:
                weight[0, t, :] = 0.0
                weight[0, t, positions[name]] = 1.0
    tail = sum(cfg.embedding_dims) + 1
    for offset in range(tail):
        row = cfg.input_channels + offset
        weight[0, row, :] = 0.0
        weight[0, row, src_cfg.input_channels + offset] = 1.0
    return weight


def build_transfer_model(
    source: TcnModel,
    plan: TransferPlan,
    target_input_channels: Optional[int] = None,
    target_feature_names: Optional[Sequence[str]] = None,
    target_embedding_vocab_sizes: Optional[Sequence[int]] = None,
) -> Tuple[TcnModel, Dict[str, Any]]:
    """
    Copy and freeze the source trunk, append blocks and attach fresh heads.

    Returns:
        (transfer model, parameter report)

    Raises:
        ShapeError: if the categorical vocabularies differ or widths differ without an adapter
    """
    width = source.config.input_channels if target_input_channels is None else int(target_input_channels)
    if target_embedding_vocab_sizes is not None and list(target_embedding_vocab_sizes) != source.config.embedding_vocab_sizes:
        raise ShapeError(
            f"target categorical vocabularies {list(target_embedding_vocab_sizes)} differ from the "
            f"source's {source.config.embedding_vocab_sizes}"
        )
    config = _target_config(source, plan, width)
    seed = derive_seed(plan.train_config.seed, "transfer")
    model = TcnModel(config, seed=seed, metadata=copy.deepcopy(source.metadata))

    source_blocks = source.config.num_blocks
    copied: List[str] = []
    for name, param in source.params.items():
        if name.startswith("heads."):
            continue
        model.params[name].data = param.data.copy()
        copied.append(name)
    if config.adapter_width is not None and source.config.adapter_width is None:
        model.params["adapter.weight"].data = _adapter_init(model, source, target_feature_names, seed)

    unfrozen_blocks = {f"blocks.{level}." for level in range(max(0, source_blocks - plan.unfreeze_top), source_blocks)}
    frozen = [n for n in copied if not any(n.startswith(prefix) for prefix in unfrozen_blocks)]
    model.set_frozen(frozen)
    for level in range(source_blocks, config.num_blocks):
        for part in ("conv2.weight", "conv2.bias"):
            model.params[f"blocks.{level}.{part}"].data *= APPENDED_BRANCH_SCALE
    released = sorted(n for n in copied if n not in model.frozen)
    model.metadata.update({
        "released_source_parameters": released,
        "transferred_from": plan.source_ref,
        "source_blocks": source_blocks,
        "transfer_plan": plan.to_dict(),
    })

    report = model.parameter_report()
    report["source_total"] = source.parameter_count()
    logger.info(
        f"✅ Transfer model: {report['trainable']} trainable / {report['frozen']} frozen "
        f"of {report['total']} parameters ({plan.appended_blocks} appended blocks, horizon {plan.horizon})"
    )
    return model, report


def scratch_counterpart(transfer_model: TcnModel, seed: int) -> TcnModel:
    """Same architecture as the transfer model, freshly initialized and fully trainable."""
    config = copy.deepcopy(transfer_model.config)
    config.adapter_width = None
    return TcnModel(config, seed=seed)


# ==================== FINE-TUNING ====================

def fine_tune(
    model: TcnModel,
    windows: Sequence,
    plan: TransferPlan,
    val_windows: Optional[Sequence] = None,
) -> TrainResult:
    """
    Train only the unfrozen parameters.

    Raises:
        FrozenParameterError: if a frozen parameter received a gradient or changed
    """
    for name in model.frozen:
        if model.params[name].requires_grad:
            raise FrozenParameterError(f"frozen parameter '{name}' is marked trainable")
    snapshot = {name: model.params[name].data.copy() for name in model.frozen}
    released = model.metadata.get("released_source_parameters", [])
    lr_scale = {name: plan.pretrained_lr_factor for name in released}

    result = train(model, windows, plan.train_config, val_windows, lr_scale=lr_scale)

    touched = [name for name in model.frozen if model.params[name].grad is not None]
    if touched:
        raise FrozenParameterError(f"gradient reached frozen parameters: {', '.join(sorted(touched))}")
    changed = [name for name, before in snapshot.items() if not np.array_equal(before, model.params[name].data)]
    if changed:
        raise FrozenParameterError(f"frozen parameters changed during fine-tuning: {', '.join(sorted(changed))}")
    logger.info(f"✅ Fine-tuned {model.trainable_parameter_count()} parameters; {len(snapshot)} frozen tensors unchanged")
    return result


# ==================== EXPERIMENTS ====================

@dataclass
class TargetData:
    """Budget-limited target history followed by its held-out test tail."""

    frame: FeatureFrame
    pipeline: FeaturePipeline
    inputs: ModelInputs
    test_start: int
    budget_hours: int


def prepare_target(
    target: FeatureFrame, config: Dict[str, Dict[str, Any]], budget_hours: int, lookback: int, horizon: int
) -> TargetData:
    """
    Keep the `budget_hours` hours just before the target's test tail.

    The pipeline is fitted on those hours only.
    """
    sized = copy.deepcopy(config)
    sized["train"]["lookback"], sized["train"]["horizon"] = lookback, horizon
    test_start = held_out_start(target, sized)
    budget = min(int(budget_hours), test_start)
    if budget < lookback + horizon:
        raise DataError(f"target budget of {budget} hours cannot hold one window of {lookback} + {horizon} hours")
    if budget < budget_hours:
        logger.warning(f"⚠️ Target holds only {test_start} pre-test hours; budget cut to {budget}")
    trimmed = target.slice_rows(test_start - budget, len(target))
    pipeline = fit_pipeline(trimmed, sized, train_end=budget, test_start=budget)
    inputs = pipeline.transform(trimmed, protected_from=budget)
    return TargetData(trimmed, pipeline, inputs, budget, budget)


@dataclass
class TransferOutcome:
    model: TcnModel
    transfer: EvaluationResult
    scratch: Optional[EvaluationResult]
    parameters: Dict[str, Any]
    plan: TransferPlan

    def report_payload(self) -> Dict[str, Any]:
        payload = {
            "plan": self.plan.to_dict(),
            "transfer": self.transfer.report_payload(),
            "parameters": self.parameters,
        }
        if self.scratch is not None:
            payload["scratch"] = self.scratch.report_payload()
        return payload


def _with_pipeline(model: TcnModel, data: TargetData) -> None:
    model.metadata.update({
        "site_id": data.frame.site_id,
        "pipeline": data.pipeline.to_dict(),
        "pipeline_hash": data.pipeline.fingerprint(),
        "feature_names": data.inputs.feature_names,
        "test_start": data.test_start,
    })


def transfer_experiment(
    source: TcnModel,
    target: FeatureFrame,
    config: Dict[str, Dict[str, Any]],
    plan: TransferPlan,
    compare_scratch: bool = True,
    out_dir: Optional[Union[str, Path]] = None,
) -> TransferOutcome:
    """
    Fine-tune a head-replaced copy of `source` on the target budget and score the target tail.

    With `compare_scratch`, a fully trainable model of the same architecture
    is trained on the same windows with the same TrainConfig.
    """
    data = prepare_target(target, config, plan.budget_hours, plan.lookback, plan.horizon)
    windows = make_windows(data.inputs, plan.lookback, plan.horizon, start=0, stop=data.test_start)
    model, parameters = build_transfer_model(
        source, plan, data.inputs.input_channels, data.inputs.feature_names, data.inputs.embedding_vocab_sizes
    )
    _with_pipeline(model, data)
    fine_tune(model, windows, plan)

    interval = IntervalSpec(*config["train"]["interval"])
    sort = bool(config["train"]["sort_quantiles"])
    transfer_eval = evaluate_model(model, data.pipeline, data.inputs, data.test_start, interval, sort)

    scratch_eval = None
    scratch_total = scratch_counterpart(model, derive_seed(plan.train_config.seed, "scratch")).parameter_count()
    if compare_scratch:
        data.inputs.protect_test_targets()
        scratch = scratch_counterpart(model, derive_seed(plan.train_config.seed, "scratch"))
        train(scratch, windows, plan.train_config)
        scratch_eval = evaluate_model(scratch, data.pipeline, data.inputs, data.test_start, interval, sort)

    parameters = dict(parameters)
    parameters["scratch_total"] = scratch_total
    parameters["trainable_ratio"] = parameters["trainable"] / scratch_total
    parameters["learnable_reduction_pct"] = 100.0 * (1.0 - parameters["trainable_ratio"])
    outcome = TransferOutcome(model, transfer_eval, scratch_eval, parameters, plan)

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(model, out_dir / "transfer.ckpt")
        write_json(out_dir / "report.json", outcome.report_payload())
        write_json(out_dir / "parameters.json", parameters)
        write_csv(out_dir / "forecasts.csv", transfer_eval.forecasts)
        logger.info(f"✅ Wrote transfer report to {out_dir / 'report.json'}")
    return outcome


def data_size_sweep(
    source: TcnModel,
    target: FeatureFrame,
    config: Dict[str, Dict[str, Any]],
    budgets: Sequence[int] = SWEEP_BUDGETS,
    settings: Sequence[Tuple[int, int]] = SWEEP_SETTINGS,
    compare_scratch: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    Transfer runs over target budgets and (lookback, horizon) settings.

    Budgets larger than the target's pre-test history are cut to it and
    repeated effective budgets are run once.
    """
    base_plan = TransferPlan.from_config(config, source)
    rows: List[Dict[str, Any]] = []
    for lookback, horizon in settings:
        sized = copy.deepcopy(config)
        sized["train"]["lookback"], sized["train"]["horizon"] = int(lookback), int(horizon)
        available = held_out_start(target, sized)
        seen = set()
        for budget in budgets:
            effective = min(int(budget), available)
            if effective in seen:
                continue
            seen.add(effective)
            plan = replace(base_plan, lookback=int(lookback), horizon=int(horizon), budget_hours=int(budget))
            try:
                outcome = transfer_experiment(source, target, config, plan, compare_scratch=compare_scratch)
            except DataError as e:
                logger.warning(f"⚠️ Skipping budget {budget} at ({lookback}, {horizon}): {e}")
                continue
            metrics = outcome.transfer.report.to_dict()
            row = {
                "budget_hours": int(budget),
                "effective_hours": effective,
                "lookback": int(lookback),
                "horizon": int(horizon),
                **metrics,
                "trainable": outcome.parameters["trainable"],
                "frozen": outcome.parameters["frozen"],
                "total": outcome.parameters["total"],
                "scratch_total": outcome.parameters["scratch_total"],
                "learnable_reduction_pct": outcome.parameters["learnable_reduction_pct"],
            }
            if outcome.scratch is not None:
                row["scratch_pinball"] = outcome.scratch.report.pinball
            rows.append(row)
            logger.info(f"🔍 Sweep ({lookback}, {horizon}) budget {effective}h: pinball {metrics['pinball']:.4f}")

    table = pd.DataFrame(rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv(out_dir / "sweep.csv", table)
        write_json(out_dir / "sweep.json", rows)
    return table
