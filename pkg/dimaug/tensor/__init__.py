"""Dense tensors with tape-based reverse-mode differentiation."""

from dimaug.tensor.core import (
    Gradients,
    Node,
    Tape,
    Tensor,
    backward,
    epsilon_for,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    numerics,
    numerics_mode,
    precision,
)
from dimaug.tensor.ops import forward_op, op_kinds, straight_through
from dimaug.tensor.optim import SGD, Adam, build_optimizer


__all__ = [
    'Adam',
    'Gradients',
    'Node',
    'SGD',
    'Tape',
    'Tensor',
    'backward',
    'build_optimizer',
    'epsilon_for',
    'forward_op',
    'get_default_dtype',
    'is_grad_enabled',
    'no_grad',
    'numerics',
    'numerics_mode',
    'op_kinds',
    'precision',
    'straight_through',
]
