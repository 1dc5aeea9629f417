from src.utils.logger import setup_logger
from src.utils.cache import LRUCache
from src.utils.errors import (
    ChargeCastError,
    ShapeError,
    GraphError,
    DataError,
    LeakageError,
    UsageError,
    FrozenParameterError,
    NumericalError,
)
from src.utils.seeding import derive_seed, make_rng

__all__ = [
    "setup_logger",
    "LRUCache",
    "ChargeCastError",
    "ShapeError",
    "GraphError",
    "DataError",
    "LeakageError",
    "UsageError",
    "FrozenParameterError",
    "NumericalError",
    "derive_seed",
    "make_rng",
]
