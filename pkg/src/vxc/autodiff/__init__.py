"""Minimal tensor library with reverse-mode automatic differentiation."""

from vxc.autodiff.tensor import (
    DEFAULT_DTYPE,
    Node,
    Tape,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    make_result,
    no_grad,
)
from vxc.autodiff import functional
from vxc.autodiff.gradcheck import GradCheckReport, grad_check, relative_error

__all__ = [
    "DEFAULT_DTYPE", "Node", "Tape", "Tensor", "as_tensor", "backward",
    "is_grad_enabled", "make_result", "no_grad", "functional",
    "GradCheckReport", "grad_check", "relative_error",
]
