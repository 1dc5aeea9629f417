"""
Multi-quantile temporal convolutional network.

Stacked dilated causal residual blocks form the trunk; the trunk state at
the last lookback step feeds one two-layer fully connected head per
quantile level, each emitting the whole horizon at once.

Parameter names are stable and hierarchical so transfer learning can copy
and freeze them by prefix:

    embed.<j>.weight                  (|vocab_j| + 1, ceil(|vocab_j| / 2))
    adapter.weight                    (1, trunk_input_width, adapter_width)
    blocks.<l>.conv1.weight / .bias   (k, c_in, c_out) / (c_out,)
    blocks.<l>.conv2.weight / .bias   (k, c_out, c_out) / (c_out,)
    blocks.<l>.downsample.weight      (1, c_in, c_out), only when c_in != c_out
    heads.<i>.hidden.weight / .bias   (c_last, hidden) / (hidden,)
    heads.<i>.out.weight / .bias      (hidden, horizon) / (horizon,)
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from ..autodiff.tensor import (
    Tensor,
    causal_conv1d,
    concat,
    dropout,
    embedding,
    index,
    matmul,
    no_grad,
    relu,
    stack,
)
from ..utils.errors import DataError, ShapeError
from ..utils.seeding import make_rng

logger = logging.getLogger("ChargeCast")

EMBEDDING_INIT_BOUND = 0.05


# ==================== CONFIG ====================

@dataclass
class TcnConfig:
    """Architecture and data-shape hyperparameters of one MQ-TCN."""

    input_channels: int
    kernel_size: int = 3
    num_blocks: int = 3
    channels: List[int] = field(default_factory=list)
    dilations: List[int] = field(default_factory=list)
    dropout: float = 0.1
    lookback: int = 168
    horizon: int = 24
    quantiles: Tuple[float, ...] = (0.05, 0.50, 0.90)
    head_hidden: int = 32
    embedding_vocab_sizes: List[int] = field(default_factory=list)
    final_activation: str = "relu"
    adapter_width: Optional[int] = None

    def __post_init__(self):
        if not self.channels:
            self.channels = [32] * self.num_blocks
        if not self.dilations:
            self.dilations = [2 ** level for level in range(self.num_blocks)]
        self.channels = [int(c) for c in self.channels]
        self.dilations = [int(d) for d in self.dilations]
        self.quantiles = tuple(float(q) for q in self.quantiles)
        self.embedding_vocab_sizes = [int(v) for v in self.embedding_vocab_sizes]
        self.validate()

    def validate(self) -> None:
        if self.input_channels < 0:
            raise ValueError("input_channels must be >= 0")
        if self.kernel_size < 1:
            raise ValueError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if len(self.channels) != self.num_blocks or len(self.dilations) != self.num_blocks:
            raise ValueError(
                f"channels ({len(self.channels)}) and dilations ({len(self.dilations)}) "
                f"must both list {self.num_blocks} blocks"
            )
        if any(c < 1 for c in self.channels):
            raise ValueError(f"channels must be positive: {self.channels}")
        if any(d < 1 for d in self.dilations) or any(b < a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ValueError(f"dilations must be positive and non-decreasing: {self.dilations}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError("lookback and horizon must be >= 1")
        if not self.quantiles or any(not 0.0 < q < 1.0 for q in self.quantiles):
            raise ValueError(f"quantiles must lie in (0, 1): {self.quantiles}")
        if any(b <= a for a, b in zip(self.quantiles, self.quantiles[1:])):
            raise ValueError(f"quantiles must be strictly increasing: {self.quantiles}")
        if self.head_hidden < 1:
            raise ValueError("head_hidden must be >= 1")
        if any(v < 1 for v in self.embedding_vocab_sizes):
            raise ValueError("embedding vocabularies must be non-empty")
        if self.final_activation not in ("relu", "identity"):
            raise ValueError(f"final_activation must be 'relu' or 'identity', got {self.final_activation}")

    @property
    def embedding_dims(self) -> List[int]:
        return [math.ceil(v / 2) for v in self.embedding_vocab_sizes]

    @property
    def trunk_input_width(self) -> int:
        """Numeric features + embedded categoricals + the past target."""
        return self.input_channels + sum(self.embedding_dims) + 1

    @property
    def block_input_width(self) -> int:
        return self.adapter_width if self.adapter_width is not None else self.trunk_input_width

    def block_widths(self) -> List[Tuple[int, int]]:
        widths = []
        c_in = self.block_input_width
        for c_out in self.channels:
            widths.append((c_in, c_out))
            c_in = c_out
        return widths

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["quantiles"] = list(self.quantiles)
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TcnConfig":
        return cls(**dict(payload))


def receptive_field(config: TcnConfig) -> int:
    """Hours of history that can reach the last output: 1 + sum 2(k-1)d_l (two convs per block)."""
    return 1 + sum(2 * (config.kernel_size - 1) * d for d in config.dilations)


# ==================== FORECAST ====================

def quantile_label(level: float) -> str:
    """0.05 -> 'q05', 0.5 -> 'q50', 0.975 -> 'q97.5'."""
    pct = level * 100.0
    if abs(pct - round(pct)) < 1e-9:
        return f"q{int(round(pct)):02d}"
    return f"q{pct:g}"


@dataclass
class QuantileForecast:
    """δ x |Q| predicted quantile values with their levels and origin."""

    values: np.ndarray
    quantile_levels: Tuple[float, ...]
    origin: Optional[pd.Timestamp] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.quantile_levels = tuple(float(q) for q in self.quantile_levels)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.quantile_levels):
            raise ShapeError(
                f"forecast values {self.values.shape} do not match {len(self.quantile_levels)} quantile levels"
            )
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("forecast contains non-finite values")

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def crossing_count(self) -> int:
        """Adjacent quantile pairs that are out of order, summed over horizon steps."""
        return int(np.sum(np.diff(self.values, axis=1) < 0))

    def column(self, level: float) -> np.ndarray:
        return self.values[:, self.quantile_levels.index(level)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=[quantile_label(q) for q in self.quantile_levels])
        frame.insert(0, "step", np.arange(1, self.horizon + 1))
        if self.origin is not None:
            frame.insert(0, "origin", self.origin)
            frame.insert(1, "timestamp", [self.origin + pd.Timedelta(hours=int(s)) for s in frame["step"]])
        return frame


def sort_quantiles(forecast: QuantileForecast) -> QuantileForecast:
    """Repair quantile crossing by sorting each horizon step ascending."""
    return QuantileForecast(np.sort(forecast.values, axis=1), forecast.quantile_levels, forecast.origin)


# ==================== BUILDING BLOCKS ====================

def residual_block(
    x: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    dilation: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    final_activation: str = "relu",
) -> Tensor:
    """
    o = Activation(x' + G(x)), G = conv -> ReLU -> dropout -> conv -> ReLU -> dropout.

    x' is x itself, or a bias-free 1x1 convolution of x when the block changes width.
    """
    h = causal_conv1d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], dilation)
    h = dropout(relu(h), dropout_rate, rng, training)
    h = causal_conv1d(h, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], dilation)
    h = dropout(relu(h), dropout_rate, rng, training)

    downsample = params.get(f"{prefix}.downsample.weight")
    skip = causal_conv1d(x, downsample, None, 1) if downsample is not None else x
    out = skip + h
    return relu(out) if final_activation == "relu" else out


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# ==================== MODEL ====================

class TcnModel:
    """Trunk of residual blocks plus one quantile head per level."""

    def __init__(
        self,
        config: TcnConfig,
        seed: int = 0,
        frozen: Optional[Iterable[str]] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.config = config
        self.seed = int(seed)
        self.params: Dict[str, Tensor] = {}
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self._build_parameters()
        self.frozen: Set[str] = set()
        self.set_frozen(frozen or ())

    # ----- construction -----

    def _add(self, name: str, shape: Tuple[int, ...], bound: float) -> None:
        rng = make_rng(self.seed, f"init:{name}")
        self.params[name] = Tensor(_uniform(rng, shape, bound), requires_grad=True, name=name)

    def _build_parameters(self) -> None:
        cfg = self.config
        k = cfg.kernel_size

        for j, (vocab, dim) in enumerate(zip(cfg.embedding_vocab_sizes, cfg.embedding_dims)):
            # Row 0 is the reserved out-of-vocabulary index
            self._add(f"embed.{j}.weight", (vocab + 1, dim), EMBEDDING_INIT_BOUND)

        if cfg.adapter_width is not None:
            self._add("adapter.weight", (1, cfg.trunk_input_width, cfg.adapter_width),
                      math.sqrt(1.0 / cfg.trunk_input_width))

        for level, (c_in, c_out) in enumerate(cfg.block_widths()):
            prefix = f"blocks.{level}"
            bound1 = math.sqrt(1.0 / (k * c_in))
            bound2 = math.sqrt(1.0 / (k * c_out))
            self._add(f"{prefix}.conv1.weight", (k, c_in, c_out), bound1)
            self._add(f"{prefix}.conv1.bias", (c_out,), bound1)
            self._add(f"{prefix}.conv2.weight", (k, c_out, c_out), bound2)
            self._add(f"{prefix}.conv2.bias", (c_out,), bound2)
            if c_in != c_out:
                self._add(f"{prefix}.downsample.weight", (1, c_in, c_out), math.sqrt(1.0 / c_in))

        self._build_heads()

    def _build_heads(self) -> None:
        cfg = self.config
        c_last = cfg.channels[-1]
        for i in range(len(cfg.quantiles)):
            prefix = f"heads.{i}"
            bound_h = math.sqrt(1.0 / c_last)
            bound_o = math.sqrt(1.0 / cfg.head_hidden)
            self._add(f"{prefix}.hidden.weight", (c_last, cfg.head_hidden), bound_h)
            self._add(f"{prefix}.hidden.bias", (cfg.head_hidden,), bound_h)
            self._add(f"{prefix}.out.weight", (cfg.head_hidden, cfg.horizon), bound_o)
            self._add(f"{prefix}.out.bias", (cfg.horizon,), bound_o)

    def replace_heads(self, horizon: int, quantiles: Sequence[float], head_hidden: Optional[int] = None) -> None:
        """Discard every quantile head and attach fresh ones for a new label space."""
        for name in [n for n in self.params if n.startswith("heads.")]:
            del self.params[name]
            self.frozen.discard(name)
        self.config.horizon = int(horizon)
        self.config.quantiles = tuple(float(q) for q in quantiles)
        if head_hidden is not None:
            self.config.head_hidden = int(head_hidden)
        self.config.validate()
        self._build_heads()

    # ----- parameters -----

    def set_frozen(self, names: Iterable[str]) -> None:
        names = set(names)
        unknown = names - set(self.params)
        if unknown:
            raise KeyError(f"cannot freeze unknown parameters: {sorted(unknown)}")
        self.frozen = names
        for name, param in self.params.items():
            param.requires_grad = name not in names

    def named_parameters(self, trainable_only: bool = False) -> Dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if not (trainable_only and n in self.frozen)}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def trainable_parameter_count(self) -> int:
        return int(sum(p.size for n, p in self.params.items() if n not in self.frozen))

    def parameter_report(self) -> Dict[str, Any]:
        """Total/trainable/frozen counts plus a per-group breakdown."""
        groups: Dict[str, int] = {}
        for name, param in self.params.items():
            group = name.split(".")[0]
            groups[group] = groups.get(group, 0) + int(param.size)
        total = self.parameter_count()
        trainable = self.trainable_parameter_count()
        return {"total": total, "trainable": trainable, "frozen": total - trainable, "groups": groups}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ShapeError(f"parameter '{name}' expects {self.params[name].shape}, got {value.shape}")
            self.params[name].data = value.copy()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def clone(self) -> "TcnModel":
        twin = TcnModel.__new__(TcnModel)
        twin.config = copy.deepcopy(self.config)
        twin.seed = self.seed
        twin.metadata = copy.deepcopy(self.metadata)
        twin.params = {
            n: Tensor(p.data, requires_grad=p.requires_grad, name=n) for n, p in self.params.items()
        }
        twin.frozen = set(self.frozen)
        return twin

    # ----- forward -----

    def _trunk_input(
        self, features: np.ndarray, past_target: np.ndarray, categorical: Optional[np.ndarray]
    ) -> Tensor:
        cfg = self.config
        features = np.asarray(features, dtype=np.float64)
        past_target = np.asarray(past_target, dtype=np.float64)
        if features.ndim == 2:
            features = features[None]
            past_target = past_target[None]
            categorical = None if categorical is None else np.asarray(categorical)[None]
        if features.shape[-1] != cfg.input_channels:
            raise ShapeError(f"expected {cfg.input_channels} feature columns, got {features.shape[-1]}")
        if past_target.shape != features.shape[:2]:
            raise ShapeError(f"past target {past_target.shape} does not match features {features.shape}")

        parts: List[Tensor] = [Tensor(features)]
        n_embed = len(cfg.embedding_vocab_sizes)
        if n_embed:
            if categorical is None or categorical.shape[-1] != n_embed:
                got = None if categorical is None else categorical.shape
                raise ShapeError(f"expected {n_embed} categorical index columns, got {got}")
            for j, vocab in enumerate(cfg.embedding_vocab_sizes):
                column = np.asarray(categorical[..., j])
                if column.size and (column.min() < 0 or column.max() > vocab):
                    raise DataError(
                        f"out-of-vocabulary categorical index in column {j}: "
                        f"values must lie in [0, {vocab}] (0 = OOV)"
                    )
                parts.append(embedding(self.params[f"embed.{j}.weight"], column.astype(np.int64)))
        parts.append(Tensor(past_target[..., None]))
        x = concat(parts, axis=-1)

        if cfg.adapter_width is not None:
            x = causal_conv1d(x, self.params["adapter.weight"], None, 1)
        return x

    def trunk(
        self,
        features: np.ndarray,
        past_target: np.ndarray,
        categorical: Optional[np.ndarray] = None,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        return_layers: bool = False,
    ):
        """Run the residual stack; returns (B, T, c_last) or every block's output."""
        cfg = self.config
        x = self._trunk_input(features, past_target, categorical)
        layers = [x]
        for level, dilation in enumerate(cfg.dilations):
            x = residual_block(
                x, self.params, f"blocks.{level}", dilation,
                dropout_rate=cfg.dropout, training=training, rng=rng,
                final_activation=cfg.final_activation,
            )
            layers.append(x)
        return layers if return_layers else x

    def heads(self, last: Tensor) -> Tensor:
        """Map (B, c_last) trunk states to (B, horizon, |Q|)."""
        outputs = []
        for i in range(len(self.config.quantiles)):
            prefix = f"heads.{i}"
            hidden = relu(matmul(last, self.params[f"{prefix}.hidden.weight"]) + self.params[f"{prefix}.hidden.bias"])
            outputs.append(matmul(hidden, self.params[f"{prefix}.out.weight"]) + self.params[f"{prefix}.out.bias"])
        return stack(outputs, axis=-1)

    def forward_batch(
        self,
        features: np.ndarray,
        past_target: np.ndarray,
        categorical: Optional[np.ndarray] = None,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Normalized-scale quantile forecasts for a batch of lookback windows."""
        features = np.asarray(features)
        steps = features.shape[-2]
        if steps != self.config.lookback:
            raise ShapeError(f"lookback length {steps} does not match the configured lookback {self.config.lookback}")
        x = self.trunk(features, past_target, categorical, training=training, rng=rng)
        last = index(x, (slice(None), -1, slice(None)))
        return self.heads(last)

    def predict(self, features: np.ndarray, past_target: np.ndarray, categorical: Optional[np.ndarray] = None) -> np.ndarray:
        """Inference without graph recording; returns (B, horizon, |Q|) normalized values."""
        with no_grad():
            return self.forward_batch(features, past_target, categorical).data.copy()

    def forward(self, window) -> QuantileForecast:
        """Forecast one WindowSample on the normalized scale."""
        values = self.predict(window.features, window.past_target, window.categorical)[0]
        return QuantileForecast(values, self.config.quantiles, window.origin)
