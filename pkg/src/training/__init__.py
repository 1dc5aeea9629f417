"""Blocked cross-validation, random search, final fit and the seasonal-naive baseline."""

from src.training.harness import (
    CVResult,
    EvaluationResult,
    FinalResult,
    TrainConfig,
    TrainResult,
    TrialResult,
    cross_validate,
    evaluate_model,
    final_fit_and_test,
    fold_inputs,
    run_search,
    seasonal_naive,
    train,
)
from src.training.search import SearchSpace, Trial, sample_trials

__all__ = [
    "CVResult",
    "EvaluationResult",
    "FinalResult",
    "TrainConfig",
    "TrainResult",
    "TrialResult",
    "cross_validate",
    "evaluate_model",
    "final_fit_and_test",
    "fold_inputs",
    "run_search",
    "seasonal_naive",
    "train",
    "SearchSpace",
    "Trial",
    "sample_trials",
]
