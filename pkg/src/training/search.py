import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..utils.seeding import make_rng

logger = logging.getLogger("ChargeCast")


@dataclass(frozen=True)
class Trial:
    trial_id: int
    hyperparameters: Dict[str, Any]


@dataclass
class SearchSpace:
    """
    Hyperparameter ranges for seeded random search.

    Discrete choices are lists; dropout is uniform on (low, high) and the
    learning rate log-uniform on (low, high). A range with low == high is fixed.
    """

    num_blocks: List[int] = field(default_factory=lambda: [2, 3, 4])
    channels: List[int] = field(default_factory=lambda: [8, 16, 32])
    kernel_size: List[int] = field(default_factory=lambda: [2, 3])
    dropout: Tuple[float, float] = (0.0, 0.3)
    learning_rate: Tuple[float, float] = (1e-4, 1e-2)
    batch_size: List[int] = field(default_factory=lambda: [16, 32, 64])
    budget: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("num_blocks", "channels", "kernel_size", "batch_size"):
            if not list(getattr(self, name)):
                raise ValueError(f"search range '{name}' is empty")
        for name in ("dropout", "learning_rate"):
            low, high = getattr(self, name)
            if high < low:
                raise ValueError(f"search range '{name}' has high < low: ({low}, {high})")
        if self.learning_rate[0] < 0 or (self.learning_rate[0] == 0 and self.learning_rate[1] > 0):
            raise ValueError("learning_rate range must be positive for log-uniform sampling")
        if self.budget < 1:
            raise ValueError("search budget must be >= 1")

    @classmethod
    def from_config(cls, section: Dict[str, Any], seed: int = 0) -> "SearchSpace":
        return cls(
            num_blocks=list(section["num_blocks"]),
            channels=list(section["channels"]),
            kernel_size=list(section["kernel_size"]),
            dropout=tuple(section["dropout"]),
            learning_rate=tuple(section["learning_rate"]),
            batch_size=list(section["batch_size"]),
            budget=int(section["budget"]),
            seed=int(seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["dropout"] = list(self.dropout)
        payload["learning_rate"] = list(self.learning_rate)
        return payload


def _choice(rng, values: Sequence):
    return values[int(rng.integers(0, len(values)))]


def sample_trial(space: SearchSpace, trial_id: int) -> Trial:
    """Each trial draws from its own sub-seed, so the first k trials never depend on the budget."""
    rng = make_rng(space.seed, f"trial-{trial_id}")
    drop_low, drop_high = space.dropout
    lr_low, lr_high = space.learning_rate
    lr = lr_low if lr_low == lr_high else math.exp(rng.uniform(math.log(lr_low), math.log(lr_high)))
    hp = {
        "num_blocks": int(_choice(rng, space.num_blocks)),
        "channels": int(_choice(rng, space.channels)),
        "kernel_size": int(_choice(rng, space.kernel_size)),
        "dropout": float(drop_low if drop_low == drop_high else rng.uniform(drop_low, drop_high)),
        "learning_rate": float(lr),
        "batch_size": int(_choice(rng, space.batch_size)),
    }
    return Trial(trial_id, hp)


def sample_trials(space: SearchSpace, budget: Optional[int] = None) -> List[Trial]:
    budget = space.budget if budget is None else budget
    if budget < 1:
        raise ValueError("search budget must be >= 1")
    trials = [sample_trial(space, k) for k in range(budget)]
    logger.info(f"🔍 Sampled {budget} random-search trials (seed {space.seed})")
    return trials
