"""Dense float64 tensors with a reverse-mode tape."""

from . import conv, functional, nn
from .conv import conv2d, conv3d, conv_family, conv_transpose2d, conv_transpose3d, depthwise2d
from .gradcheck import gradcheck, numerical_grad
from .tensor import DiffGraph, Function, GraphConsumedError, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Tensor", "Function", "DiffGraph", "GraphConsumedError", "backward", "no_grad",
    "is_grad_enabled", "conv", "functional", "nn", "conv2d", "conv3d", "conv_transpose2d",
    "conv_transpose3d", "depthwise2d", "conv_family", "gradcheck", "numerical_grad",
]
