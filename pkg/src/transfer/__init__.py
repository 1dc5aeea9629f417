"""DTW source ranking and head-replacement transfer learning."""

from src.transfer.dtw import DtwResult, dtw_distance, rank_sources, znormalize
from src.transfer.transfer import (
    TransferOutcome,
    TransferPlan,
    build_transfer_model,
    data_size_sweep,
    fine_tune,
    transfer_experiment,
)

__all__ = [
    "DtwResult",
    "dtw_distance",
    "rank_sources",
    "znormalize",
    "TransferOutcome",
    "TransferPlan",
    "build_transfer_model",
    "data_size_sweep",
    "fine_tune",
    "transfer_experiment",
]
