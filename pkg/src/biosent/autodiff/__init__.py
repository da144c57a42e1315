"""Minimal reverse-mode autodiff over numpy arrays."""

from .core import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    dropout,
    elu,
    embedding_lookup,
    exp,
    getitem,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    stop_gradient,
    sub,
    sum,
    topological_order,
    transpose,
)
from .gradcheck import grad_check, numeric_grad

__all__ = [
    "Tensor", "add", "as_tensor", "backward", "concat", "div", "dropout", "elu",
    "embedding_lookup", "exp", "getitem", "grad_check", "is_grad_enabled",
    "l2_normalize", "layer_norm", "log", "log_softmax", "matmul", "mean", "mul",
    "no_grad", "numeric_grad", "power", "relu", "reshape", "scale", "sigmoid",
    "softmax", "softplus", "stop_gradient", "sub", "sum", "topological_order",
    "transpose",
]
