"""
Dense tensors, primitive math, reverse-mode gradients and the finite-difference oracle.
"""

from . import functional
from .gradcheck import check_gradients, finite_diff_grad, relative_error
from .rng import SplitMix64, fnv1a_64
from .tensor import GradTape, Parameter, Tensor, backward, current_tape

__all__ = [
    "Tensor",
    "Parameter",
    "GradTape",
    "backward",
    "current_tape",
    "functional",
    "finite_diff_grad",
    "relative_error",
    "check_gradients",
    "SplitMix64",
    "fnv1a_64",
]
