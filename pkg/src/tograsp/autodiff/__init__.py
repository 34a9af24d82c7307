"""Minimal float32 tensors with a reverse-mode tape."""

from .checkpoint import read_arrays, write_arrays
from .gradcheck import grad_check
from .ops import (
    add,
    bce,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    embedding_lookup,
    exp,
    gather_rows,
    l2_normalize,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sum_all,
    transpose,
    upsample_nearest,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, current_tape, default_dtype

__all__ = [
    "AdamState", "Tape", "Tensor", "adam_step", "add", "bce", "concat", "conv2d",
    "conv_transpose2d", "cross_entropy", "current_tape", "default_dtype",
    "embedding_lookup", "exp", "gather_rows", "grad_check", "l2_normalize", "linear",
    "matmul", "mean", "mul", "read_arrays", "relu", "reshape", "scale", "sigmoid",
    "softmax", "sum_all", "transpose", "upsample_nearest", "write_arrays",
]
