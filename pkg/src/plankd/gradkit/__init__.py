"""Reverse-mode differentiation core: tensors, op catalog, grad check, Adam."""

from . import ops
from .gradcheck import grad_check
from .nn import MLP, Conv2d, Layer, Linear, set_requires_grad
from .ops import OPS, forward
from .optim import Adam, adam_step
from .rng import derive_seed, make_rng
from .tensor import (
    Graph,
    GradkitError,
    NonFiniteError,
    Tensor,
    active_graph,
    as_tensor,
    backward,
    graph,
    no_grad,
    strict,
)

__all__ = [
    "Adam",
    "Conv2d",
    "Graph",
    "GradkitError",
    "Layer",
    "Linear",
    "MLP",
    "NonFiniteError",
    "OPS",
    "Tensor",
    "active_graph",
    "adam_step",
    "as_tensor",
    "backward",
    "derive_seed",
    "forward",
    "grad_check",
    "graph",
    "make_rng",
    "no_grad",
    "ops",
    "set_requires_grad",
    "strict",
]
