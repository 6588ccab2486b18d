"""Minimal dense numeric layer with reverse-mode gradients."""
from . import checkpoint, kernels
from .gradcheck import check_gradients, finite_diff, relative_error
from .nn import Embedding, LayerNorm, Linear, Module
from .tensor import (
    MaskAllForbidden,
    NotScalar,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat_last_dim,
    cross_entropy,
    dropout,
    embedding_lookup,
    gather_last,
    grad_enabled,
    layer_norm,
    matmul,
    mean_all,
    mul,
    no_grad,
    permute,
    relu,
    reshape,
    scale,
    softmax_rows,
    sub,
    sum_all,
    transpose_last_two,
)

__all__ = [
    "Embedding",
    "LayerNorm",
    "Linear",
    "MaskAllForbidden",
    "Module",
    "NotScalar",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "check_gradients",
    "checkpoint",
    "concat_last_dim",
    "cross_entropy",
    "dropout",
    "embedding_lookup",
    "finite_diff",
    "gather_last",
    "grad_enabled",
    "kernels",
    "layer_norm",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "permute",
    "relative_error",
    "relu",
    "reshape",
    "scale",
    "softmax_rows",
    "sub",
    "sum_all",
    "transpose_last_two",
]
