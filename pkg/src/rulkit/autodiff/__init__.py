"""Small reverse-mode differentiation engine on top of numpy."""
from . import ops
from .gradcheck import GradCheckResult, check_gradients, relative_error
from .tensor import (
    VJP,
    NumericError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    grad_enabled,
    no_grad,
    topological_order,
    zero_grad,
)
