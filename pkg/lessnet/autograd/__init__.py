"""Dense tensors with reverse-mode differentiation over the registration op set."""

from lessnet.autograd.ops import (
    add,
    as_tensor,
    box_sum,
    concat,
    conv,
    div,
    fractional_conv,
    getitem,
    grid_sample,
    leaky_relu,
    mean,
    mul,
    neg,
    pool,
    softsign,
    spatial_gradient,
    square,
    sub,
)
from lessnet.autograd.ops import sum as sum_all
from lessnet.autograd.tensor import (
    ComputationRecord,
    Tensor,
    backward,
    current_record,
    default_dtype,
    precision,
    record,
)

__all__ = [
    "ComputationRecord",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "box_sum",
    "concat",
    "conv",
    "current_record",
    "default_dtype",
    "div",
    "fractional_conv",
    "getitem",
    "grid_sample",
    "leaky_relu",
    "mean",
    "mul",
    "neg",
    "pool",
    "precision",
    "record",
    "softsign",
    "spatial_gradient",
    "square",
    "sub",
    "sum_all",
]
