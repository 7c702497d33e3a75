"""Minimal reverse-mode differentiation substrate."""

from .gradcheck import GradCheckReport, finite_difference_check
from .ops import (
    add,
    batch_norm,
    categorical_log_loss,
    conv2d,
    cross_entropy,
    euclidean_distance,
    flatten,
    global_avg_pool,
    l2_normalize_flat,
    linear,
    one_hot,
    pad_channels,
    relu,
    softmax_rows,
    two_sided_log_loss,
    weighted_sum,
)
from .optim import LRSchedule, Optimizer, OptimizerState, schedule_rate
from .tensor import Parameter, Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "GradCheckReport", "finite_difference_check", "add", "batch_norm", "categorical_log_loss", "conv2d",
    "cross_entropy", "euclidean_distance", "flatten", "global_avg_pool",
    "l2_normalize_flat", "linear", "one_hot", "pad_channels", "relu", "softmax_rows",
    "two_sided_log_loss", "weighted_sum", "LRSchedule", "Optimizer", "OptimizerState",
    "schedule_rate", "Parameter", "Tensor", "as_tensor", "grad_enabled", "no_grad",
]
