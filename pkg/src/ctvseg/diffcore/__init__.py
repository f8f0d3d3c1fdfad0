"""Minimal reverse-mode differentiation over dense numpy arrays."""

from .gradcheck import PROBES, gradcheck, gradcheck_fn
from .nn import Conv3d, ConvTranspose3d, InstanceNorm3d, LayerNorm, Linear, Module, Parameter
from .ops import KINDS, apply
from .tensor import (
    ConformanceError,
    ContractError,
    NumericError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "KINDS", "PROBES", "ConformanceError", "ContractError", "Conv3d", "ConvTranspose3d",
    "InstanceNorm3d", "LayerNorm", "Linear", "Module", "NumericError", "Parameter", "Tensor",
    "apply", "as_tensor", "backward", "default_dtype", "gradcheck", "gradcheck_fn", "no_grad",
    "precision", "set_default_dtype",
]
