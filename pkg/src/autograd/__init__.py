"""Float64 tensors with reverse-mode differentiation."""
from .tensor import Function, Tape, Tensor, backward, default_tape, no_grad, reset_default_tape, tensor

__all__ = [
    "Function",
    "Tape",
    "Tensor",
    "backward",
    "default_tape",
    "no_grad",
    "reset_default_tape",
    "tensor",
]
