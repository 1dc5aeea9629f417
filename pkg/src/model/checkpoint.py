import logging
from pathlib import Path
from typing import Union

import numpy as np

from ..utils.errors import DataError
from ..utils.io import atomic_write_text, read_json, to_json
from .tcn import TcnConfig, TcnModel

logger = logging.getLogger("ChargeCast")

FORMAT_VERSION = 1


def save_checkpoint(model: TcnModel, path: Union[str, Path]) -> Path:
    """
    Write a self-describing JSON checkpoint.

    Floats are stored with Python's shortest round-trip repr, so loading is bit-exact.
    """
    payload = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "frozen": sorted(model.frozen),
        "scaler_hash": model.metadata.get("pipeline_hash"),
        "metadata": model.metadata,
        "parameters": [
            {"name": name, "shape": list(param.shape), "data": param.data.ravel().tolist()}
            for name, param in model.params.items()
        ],
    }
    path = atomic_write_text(path, to_json(payload))
    logger.info(f"✅ Saved checkpoint ({model.parameter_count()} parameters) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> TcnModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = read_json(path)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"Unsupported checkpoint format version {version} in {path}")

    config = TcnConfig.from_dict(payload["config"])
    model = TcnModel(config, seed=payload.get("seed", 0), metadata=payload.get("metadata") or {})
    state = {
        entry["name"]: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for entry in payload["parameters"]
    }
    model.load_state_dict(state)
    model.set_frozen(payload.get("frozen", []))
    logger.debug(f"Loaded checkpoint {path}")
    return model
