"""Minimal reverse-mode engine, CNN layers and Adam."""
from .autodiff import (
    OpCounter, Tensor, add, arcsin, clip, concat, cos, div, exp, expm1, getitem,
    is_tensor, log, matmul, maximum, mean, minimum, mul, power, relu, reshape,
    sigmoid, sin, sqrt, stack, sub, tsum, value, where,
)
from .gradcheck import GradCheckResult, grad_check, numeric_grad, relative_error
from .layers import conv1d, dense, dropout, global_avg_pool, he_uniform, maxpool1d
from .optim import Adam, AdamState, adam_step

__all__ = [
    "OpCounter", "Tensor", "add", "arcsin", "clip", "concat", "cos", "div", "exp",
    "expm1", "getitem", "is_tensor", "log", "matmul", "maximum", "mean", "minimum",
    "mul", "power", "relu", "reshape", "sigmoid", "sin", "sqrt", "stack", "sub",
    "tsum", "value", "where", "GradCheckResult", "grad_check", "numeric_grad",
    "relative_error", "conv1d", "dense", "dropout", "global_avg_pool", "he_uniform",
    "maxpool1d", "Adam", "AdamState", "adam_step",
]
