"""Differentiable-computation substrate: tensors, ops, modules, Adam."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Module
from .ops import (add, batchnorm2d, concat, conv2d, gelu, layernorm, linear, matmul,
                  maxpool2, mse, relu, softmax, upsample2)
from .optim import Adam, MissingGradError, adam_step
from .tensor import (GraphError, NonFiniteError, Parameter, Tensor, backward, grad_enabled,
                     no_grad, zero_grads)

__all__ = [
    "ops", "Tensor", "Parameter", "backward", "no_grad", "grad_enabled", "zero_grads",
    "GraphError", "NonFiniteError", "Module", "Conv2d", "BatchNorm2d", "LayerNorm", "Linear",
    "Adam", "adam_step", "MissingGradError", "check_gradients", "numerical_gradient",
    "relative_error", "add", "batchnorm2d", "concat", "conv2d", "gelu", "layernorm", "linear",
    "matmul", "maxpool2", "mse", "relu", "softmax", "upsample2",
]
