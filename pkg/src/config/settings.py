import copy
import os
from pathlib import Path
from typing import Dict, Any, Optional
from dotenv import load_dotenv

# Load environment variables
BASE_DIR = Path(__file__).parent.parent.parent
ENV_PATH = BASE_DIR / ".env"
load_dotenv(ENV_PATH, override=False)

# ==================== OUTPUT ROOT ====================

# The only environment override honoured by the tool
OUTPUT_ROOT = Path(os.getenv("CHARGECAST_OUTPUT_DIR", str(BASE_DIR / "runs")))

# ==================== DATA CONFIG ====================

DATA_CONFIG = {
    "anomaly_window": 168,        # Trailing IQR window (hours)
    "anomaly_k": 3.0,             # IQR multiplier; inf disables clipping
    "end_date": None,             # Optional cutoff, e.g. "2020-03-01" (off by default)
    "station_code_dim": 30,       # Bottleneck of the station-activity autoencoder
    "station_encoder_epochs": 200,
    "station_encoder_lr": 0.01,
    "use_station_activity": False,
    "test_frac": 0.10,
    "folds": 5,
}

# ==================== TCN CONFIG ====================

TCN_CONFIG = {
    "kernel_size": 3,
    "num_blocks": 3,
    "channels": 32,               # Channels per block
    "dropout": 0.1,
    "head_hidden": 32,
    "final_activation": "relu",   # "relu" or "identity"
}

# ==================== TRAINING CONFIG ====================

TRAIN_CONFIG = {
    "epochs": 200,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "patience": 20,
    "seed": 0,
    "quantiles": [0.05, 0.50, 0.90],
    "lookback": 168,
    "horizon": 24,
    "sort_quantiles": False,
    "interval": [0.05, 0.90],     # Lower/upper levels of the evaluated interval
}

# ==================== SEARCH CONFIG ====================

SEARCH_CONFIG = {
    "budget": 8,
    "num_blocks": [2, 3, 4],
    "channels": [8, 16, 32],
    "kernel_size": [2, 3],
    "dropout": [0.0, 0.3],        # Continuous range (low, high)
    "learning_rate": [1e-4, 1e-2],  # Log-uniform range (low, high)
    "batch_size": [16, 32, 64],
    "jobs": 1,
}

# ==================== TRANSFER CONFIG ====================

TRANSFER_CONFIG = {
    "budget_hours": 336,          # "two weeks" of target data
    "horizon": 24,
    "lookback": 72,
    "appended_blocks": 1,
    "appended_channels": 32,
    "unfreeze_top": 0,
    "lr_factor": 0.1,             # Released source weights train at factor x source lr
    "dtw_window_days": 28,
    "dtw_max_points": 336,
    "dtw_band": None,
}

# ==================== SYNTH CONFIG ====================

SYNTH_CONFIG = {
    "site_id": "synth-site",
    "seed": 0,
    "start": "2019-01-07",
    "months": 6,
    "sessions_per_day": 30.0,
    "station_count": 20,
    "sigma": 0.5,
    "weekend_multiplier": 0.3,
    "holiday_multiplier": 0.2,
    "trend_per_year": 0.0,
    "energy_mean_kwh": 8.0,
    "hour_shift": 0,
    "scale": 1.0,
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "data": DATA_CONFIG,
    "tcn": TCN_CONFIG,
    "train": TRAIN_CONFIG,
    "search": SEARCH_CONFIG,
    "transfer": TRANSFER_CONFIG,
    "synth": SYNTH_CONFIG,
}

# ==================== LOGGING CONFIG ====================

LOGS_DIR = BASE_DIR / "logs"
LOGS_DIR.mkdir(exist_ok=True)

LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "detailed": {
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S"
        },
        "simple": {
            "format": "%(levelname)s - %(message)s"
        }
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "level": "INFO",
            "formatter": "simple",
            "stream": "ext://sys.stderr"
        },
        "file": {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "DEBUG",
            "formatter": "detailed",
            "filename": str(LOGS_DIR / "chargecast.log"),
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "encoding": "utf-8"
        }
    },
    "loggers": {
        "ChargeCast": {
            "level": "DEBUG",
            "handlers": ["console", "file"],
            "propagate": False
        }
    },
    "root": {
        "level": "WARNING",
        "handlers": ["console"]
    }
}

# ==================== RESOLUTION ====================

def default_config() -> Dict[str, Dict[str, Any]]:
    """Return a deep copy of every default section."""
    return copy.deepcopy(DEFAULTS)


def resolve_config(
    defaults: Dict[str, Dict[str, Any]],
    file_config: Optional[Dict[str, Dict[str, Any]]] = None,
    flag_config: Optional[Dict[str, Dict[str, Any]]] = None,
) -> Dict[str, Dict[str, Any]]:
    """
    Merge configuration layers with precedence flags > file > defaults.

    Args:
        defaults: Section -> key -> value defaults
        file_config: Values read from a JSON config file
        flag_config: Values given explicitly on the command line (None values are ignored)

    Returns:
        A new, fully materialized configuration
    """
    resolved = copy.deepcopy(defaults)
    for layer in (file_config or {}, flag_config or {}):
        for section, values in layer.items():
            if section not in resolved:
                raise ValueError(f"Unknown config section: {section}")
            for key, value in values.items():
                if value is None:
                    continue
                if key not in resolved[section]:
                    raise ValueError(f"Unknown config key: {section}.{key}")
                resolved[section][key] = value
    return resolved

# ==================== VALIDATION ====================

def validate_config(config: Dict[str, Dict[str, Any]]) -> bool:
    """Validate that the resolved configuration is internally consistent."""
    train = config["train"]
    if train["epochs"] < 0:
        raise ValueError("train.epochs must be >= 0")
    if train["epochs"] > 0 and train["patience"] >= train["epochs"]:
        raise ValueError(
            f"train.patience ({train['patience']}) must be < train.epochs ({train['epochs']})"
        )
    if train["batch_size"] < 1:
        raise ValueError("train.batch_size must be >= 1")

    quantiles = list(train["quantiles"])
    if not quantiles or any(not 0.0 < q < 1.0 for q in quantiles):
        raise ValueError(f"Quantiles must lie in (0, 1): {quantiles}")
    if any(b <= a for a, b in zip(quantiles, quantiles[1:])):
        raise ValueError(f"Quantiles must be strictly increasing: {quantiles}")
    if 0.5 not in quantiles:
        raise ValueError(f"Quantiles must include the median level 0.5 (ND is scored on it): {quantiles}")

    lower, upper = train["interval"]
    if not 0.0 < lower < upper < 1.0:
        raise ValueError(f"Invalid interval levels: {lower}, {upper}")
    if lower not in quantiles or upper not in quantiles:
        raise ValueError(f"Interval levels {lower}, {upper} must be among the quantiles {quantiles}")

    if train["lookback"] < 1 or train["horizon"] < 1:
        raise ValueError("lookback and horizon must be >= 1")

    data = config["data"]
    if not 0.0 < data["test_frac"] < 1.0:
        raise ValueError("data.test_frac must lie in (0, 1)")
    if data["folds"] < 1:
        raise ValueError("data.folds must be >= 1")

    if config["search"]["budget"] < 1:
        raise ValueError("search.budget must be >= 1")
    return True
