"""Minimal reverse-mode differentiable computation on numpy float64 arrays."""

from .tensor import (
    Tensor,
    Parameter,
    absolute,
    backward,
    concat,
    leaky_relu,
    index_rows,
    mean,
    monitor_kinks,
    no_grad,
    relu,
    segment_sum,
    sigmoid,
    slice_cols,
    take_per_row,
    tanh,
)
from .layers import GRUCell, Linear, Module, TwoLayerMLP, linear_forward
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint, restore_parameters

__all__ = [
    "Tensor",
    "Parameter",
    "absolute",
    "backward",
    "concat",
    "leaky_relu",
    "index_rows",
    "mean",
    "monitor_kinks",
    "no_grad",
    "relu",
    "segment_sum",
    "sigmoid",
    "slice_cols",
    "take_per_row",
    "tanh",
    "GRUCell",
    "Linear",
    "Module",
    "TwoLayerMLP",
    "linear_forward",
    "Adam",
    "load_checkpoint",
    "save_checkpoint",
    "restore_parameters",
]
