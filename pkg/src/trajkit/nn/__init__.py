"""Minimal dense-tensor autodiff and the neural primitives the model needs."""

from .tensor import (
    Tensor,
    add,
    astensor,
    concat,
    dropout,
    exp,
    gather_rows,
    log,
    logsumexp_rows,
    matmul,
    mul,
    neg,
    no_grad,
    pow_scalar,
    reduce_mean,
    reduce_sum,
    relu,
    sigmoid,
    smooth_l1,
    softmax,
    softplus,
    sub,
    tanh,
    transpose,
)
from .layers import BatchNorm1d, Linear, LSTMCell, MapMLP, Module, xavier_uniform
from .optim import Adam, PlateauScheduler
from .checkpoint import (
    load_checkpoint,
    parameter_element_count,
    save_checkpoint,
)

__all__ = [
    "Tensor", "add", "astensor", "concat", "dropout", "exp", "gather_rows",
    "log", "logsumexp_rows", "matmul", "mul", "neg", "no_grad", "pow_scalar",
    "reduce_mean", "reduce_sum", "relu", "sigmoid", "smooth_l1", "softmax",
    "softplus", "sub", "tanh", "transpose",
    "BatchNorm1d", "Linear", "LSTMCell", "MapMLP", "Module", "xavier_uniform",
    "Adam", "PlateauScheduler",
    "load_checkpoint", "parameter_element_count", "save_checkpoint",
]
