"""
Linear autoencoder for high-cardinality multi-hot groups.

Station activity (one column per charging station) is squeezed to a small
code per hour: multi-hot -> code -> multi-hot, trained on squared
reconstruction error over training rows only. Groups narrower than the code
pass through untouched.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.optim import Adam
from ..autodiff.tensor import Tensor, matmul, mean, mul, sub
from ..utils.errors import DataError
from ..utils.io import json_sha256
from ..utils.seeding import make_rng
from .features import STATION_PREFIX, FeatureFrame

logger = logging.getLogger("ChargeCast")


@dataclass
class StationEncoder:
    """Fitted encoder over a fixed column vocabulary."""

    stations: List[str]
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    decoder_weights: Optional[np.ndarray] = None
    decoder_bias: Optional[np.ndarray] = None
    loss_curve: List[float] = field(default_factory=list)

    @property
    def passthrough(self) -> bool:
        return self.weights is None

    @property
    def output_dim(self) -> int:
        return len(self.stations) if self.passthrough else int(self.weights.shape[1])

    def output_names(self, prefix: str = "station_code") -> List[str]:
        if self.passthrough:
            return [f"{STATION_PREFIX}{s}" for s in self.stations]
        return [f"{prefix}_{i:02d}" for i in range(self.output_dim)]

    def align(self, frame: FeatureFrame) -> np.ndarray:
        """Multi-hot matrix of `frame` ordered by this encoder's vocabulary; unknown stations are dropped."""
        present = set(frame.station_columns)
        known = {f"{STATION_PREFIX}{s}" for s in self.stations}
        unknown = present - known
        if unknown:
            logger.warning(f"⚠️ {len(unknown)} stations at site {frame.site_id} are outside the encoder vocabulary")
        matrix = np.zeros((len(frame), len(self.stations)), dtype=np.float64)
        for j, station in enumerate(self.stations):
            name = f"{STATION_PREFIX}{station}"
            if name in present:
                matrix[:, j] = frame.data[name].to_numpy(dtype=np.float64)
        return matrix

    def encode(self, activity: np.ndarray) -> np.ndarray:
        activity = np.asarray(activity, dtype=np.float64)
        if activity.shape[-1] != len(self.stations):
            raise DataError(f"activity has {activity.shape[-1]} columns, encoder expects {len(self.stations)}")
        if self.passthrough:
            return activity.copy()
        return activity @ self.weights + self.bias

    def to_dict(self) -> Dict:
        payload = {"stations": self.stations, "passthrough": self.passthrough}
        if not self.passthrough:
            payload.update({
                "weights": self.weights.tolist(),
                "bias": self.bias.tolist(),
                "decoder_weights": self.decoder_weights.tolist(),
                "decoder_bias": self.decoder_bias.tolist(),
            })
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "StationEncoder":
        if payload.get("passthrough", True):
            return cls(list(payload["stations"]))
        return cls(
            list(payload["stations"]),
            np.asarray(payload["weights"], dtype=np.float64),
            np.asarray(payload["bias"], dtype=np.float64),
            np.asarray(payload["decoder_weights"], dtype=np.float64),
            np.asarray(payload["decoder_bias"], dtype=np.float64),
        )

    def fingerprint(self) -> str:
        return json_sha256(self.to_dict())


def fit_linear_autoencoder(
    data: np.ndarray,
    code_dim: int,
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
) -> Tuple[Dict[str, np.ndarray], List[float]]:
    """
    Full-batch Adam on mean squared reconstruction error.

    Returns:
        (parameters, per-epoch loss before each update)
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError(f"autoencoder needs a non-empty (rows, columns) matrix, got {data.shape}")
    width = data.shape[1]
    rng = make_rng(seed, "station-autoencoder")
    bound_enc = np.sqrt(1.0 / width)
    bound_dec = np.sqrt(1.0 / code_dim)
    params = {
        "encoder.weight": Tensor(rng.uniform(-bound_enc, bound_enc, (width, code_dim)), requires_grad=True),
        "encoder.bias": Tensor(np.zeros(code_dim), requires_grad=True),
        "decoder.weight": Tensor(rng.uniform(-bound_dec, bound_dec, (code_dim, width)), requires_grad=True),
        "decoder.bias": Tensor(np.zeros(width), requires_grad=True),
    }
    optimizer = Adam(params, lr=lr)
    inputs = Tensor(data)

    curve: List[float] = []
    for _ in range(epochs):
        optimizer.zero_grad()
        code = matmul(inputs, params["encoder.weight"]) + params["encoder.bias"]
        recon = matmul(code, params["decoder.weight"]) + params["decoder.bias"]
        error = sub(recon, inputs)
        loss = mean(mul(error, error))
        loss.backward()
        curve.append(loss.item())
        optimizer.step()

    fitted = {name: p.data.copy() for name, p in params.items()}
    return fitted, curve


def compress_station_activity(
    frames: Sequence[FeatureFrame],
    train_rows: Optional[Sequence[slice]] = None,
    code_dim: int = 30,
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
) -> Tuple[Dict[str, np.ndarray], StationEncoder]:
    """
    Fit one encoder over the union station vocabulary of `frames`.

    Args:
        frames: Hourly frames carrying station:<id> columns
        train_rows: Per-frame training slice (whole frame when omitted)
        code_dim: Bottleneck width
        epochs: Full-batch training epochs
        lr: Adam learning rate
        seed: Root seed for initialization

    Returns:
        ({site_id: (T, output_dim) codes}, fitted encoder)
    """
    if not frames:
        raise DataError("station compression needs at least one frame")
    stations = sorted({c[len(STATION_PREFIX):] for f in frames for c in f.station_columns})
    if not stations:
        raise DataError("no station activity columns to compress")
    rows = list(train_rows) if train_rows is not None else [slice(None)] * len(frames)

    encoder = StationEncoder(stations)
    if len(stations) < code_dim:
        logger.info(f"Station vocabulary has {len(stations)} < {code_dim} entries; passing activity through")
        return {f.site_id: encoder.encode(encoder.align(f)) for f in frames}, encoder

    training = np.concatenate([encoder.align(f)[r] for f, r in zip(frames, rows)], axis=0)
    fitted, curve = fit_linear_autoencoder(training, code_dim, epochs=epochs, lr=lr, seed=seed)
    encoder.weights = fitted["encoder.weight"]
    encoder.bias = fitted["encoder.bias"]
    encoder.decoder_weights = fitted["decoder.weight"]
    encoder.decoder_bias = fitted["decoder.bias"]
    encoder.loss_curve = curve
    if curve:
        logger.info(
            f"✅ Station autoencoder {len(stations)} -> {code_dim}: "
            f"reconstruction MSE {curve[0]:.5f} -> {curve[-1]:.5f}"
        )
    return {f.site_id: encoder.encode(encoder.align(f)) for f in frames}, encoder
