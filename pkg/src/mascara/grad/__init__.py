"""Minimal dense/convolutional tensor arithmetic with reverse-mode gradients."""

from mascara.grad.backend import active_backend
from mascara.grad.graph import (
    ActivationTrace,
    BiasAdd,
    ComputationGraph,
    Conv2D,
    Dense,
    Flatten,
    GraphError,
    L2Normalize,
    MaxPool2D,
    NumericalError,
    ReLU,
    backward,
    forward,
    grad_check,
)
from mascara.grad.serialize import load_graph, save_graph

__all__ = [
    "ActivationTrace",
    "BiasAdd",
    "ComputationGraph",
    "Conv2D",
    "Dense",
    "Flatten",
    "GraphError",
    "L2Normalize",
    "MaxPool2D",
    "NumericalError",
    "ReLU",
    "active_backend",
    "backward",
    "forward",
    "grad_check",
    "load_graph",
    "save_graph",
]
