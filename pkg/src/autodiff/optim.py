from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from ..utils.errors import GraphError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment buffers and step counter of one Adam run."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    # Per-parameter multipliers on lr; absent names use 1.0
    lr_scale: Dict[str, float] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """
    Apply one bias-corrected Adam update in place.

    Grads are left untouched; the caller zeroes them.

    Raises:
        GraphError: if any registered parameter has no gradient
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise GraphError(f"missing gradient for parameter(s): {', '.join(missing)}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, param in params.items():
        grad = param.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        if m.shape != param.shape:
            raise GraphError(f"moment buffer for '{name}' has shape {m.shape}, parameter has {param.shape}")

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)

        lr = state.lr * state.lr_scale.get(name, 1.0)
        param.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Adam over a fixed, ordered set of named parameters."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        lr_scale: Optional[Mapping[str, float]] = None,
    ):
        self.params: Dict[str, Tensor] = dict(params)
        unknown = sorted(set(lr_scale or {}) - set(self.params))
        if unknown:
            raise GraphError(f"lr_scale names unknown parameter(s): {', '.join(unknown)}")
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, lr_scale=dict(lr_scale or {}))

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
