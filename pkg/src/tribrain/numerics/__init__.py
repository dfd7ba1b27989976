"""Minimal dense tensor engine with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import GradCheckError, grad_check
from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import ShapeError, Tape, Tensor, as_tensor, backward, current_tape, fresh_tape, no_grad

__all__ = [
    "GradCheckError",
    "KERNEL_BACKEND",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "current_tape",
    "fresh_tape",
    "grad_check",
    "no_grad",
    "ops",
]
