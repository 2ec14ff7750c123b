"""Minimal reverse-mode autodiff engine and the layers built on it."""

from .gradcheck import grad_check, numeric_grad
from .layers import GROUPS, MLP, Conv1d, Conv2d, LayerNorm, Linear, Module, Parameter
from .ops import (
    activation,
    bilinear_sample,
    conv1d,
    conv2d,
    conv_out_len,
    dropout,
    interp_linear_1d,
    inverse_sigmoid,
    layer_norm,
    linear,
    log_softmax,
    multiscale_sample,
    relu,
    sigmoid,
    softmax,
)
from .optim import Adam, AdamState, CosineSchedule, PlateauSchedule, adam_step, make_schedule
from .rng import RngState, derive_seed
from .tensor import (
    ConfigError,
    NumericError,
    ShapeError,
    Tensor,
    as_tensor,
    clamp,
    concat,
    exp,
    log,
    maximum,
    minimum,
    no_grad,
    sqrt,
    stack,
    tabs,
)

TensorBuffer = Tensor

__all__ = [name for name in dir() if not name.startswith("_")]
