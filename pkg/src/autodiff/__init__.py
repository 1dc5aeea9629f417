"""Minimal dense-tensor math with reverse-mode autodiff and Adam."""

from src.autodiff.tensor import (
    ComputeGraph,
    Tensor,
    add,
    causal_conv1d,
    concat,
    dropout,
    embedding,
    index,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    stack,
    sub,
    tensor_sum,
)
from src.autodiff.optim import Adam, AdamState, adam_step

__all__ = [
    "ComputeGraph",
    "Tensor",
    "add",
    "causal_conv1d",
    "concat",
    "dropout",
    "embedding",
    "index",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "stack",
    "sub",
    "tensor_sum",
    "Adam",
    "AdamState",
    "adam_step",
]
