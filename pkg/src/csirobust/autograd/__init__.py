"""Minimal reverse-mode differentiation over dense float64 arrays."""

from . import functional
from .graph import Graph, backward, evaluate, finite_diff_check, relative_error
from .nn import GRU, Adam, Conv1d, Linear, Module, ReduceLROnPlateau
from .tensor import (NonFiniteError, Parameter, ShapeError, Tensor, as_tensor, grad,
                     is_grad_enabled, no_grad)

__all__ = [
    "functional", "Graph", "evaluate", "backward", "finite_diff_check", "relative_error",
    "Module", "Linear", "Conv1d", "GRU", "Adam", "ReduceLROnPlateau", "Tensor",
    "Parameter", "ShapeError", "NonFiniteError", "as_tensor", "grad", "no_grad",
    "is_grad_enabled",
]
