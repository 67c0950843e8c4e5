"""Minimal float64 tensor kernel with reverse-mode autodiff and RMSProp."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .optim import NonFiniteGradient, OptimState, rmsprop_step
from .tensor import OPS, Graph, ShapeError, Tensor, backward, forward_op

__all__ = [
    "BACKEND", "OPS", "CheckpointError", "Graph", "NonFiniteGradient", "OptimState",
    "ShapeError", "Tensor", "backward", "forward_op", "load_checkpoint",
    "rmsprop_step", "save_checkpoint",
]
