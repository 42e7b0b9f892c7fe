"""Fixed-vocabulary computation graphs with reverse-mode gradients.

The layer set is deliberately closed (conv, bias, relu, maxpool, flatten,
dense, l2norm): every backward pass is hand-verifiable and checked against
finite differences. All tensors are float64, C-contiguous, channel-last.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mascara.grad.backend import kernels

NORM_EPS = 1e-12


class GraphError(ValueError):
    """Raised for inconsistent layer/shape/weight definitions."""


class NumericalError(ArithmeticError):
    """Raised when an operation produces non-finite values."""


@dataclass(frozen=True)
class Conv2D:
    weight: str
    stride: int = 1
    pad: int = 0
    kind: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class BiasAdd:
    weight: str
    kind: str = field(default="bias_add", init=False)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class MaxPool2D:
    size: int
    stride: int
    kind: str = field(default="maxpool2d", init=False)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class Dense:
    weight: str
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class L2Normalize:
    kind: str = field(default="l2normalize", init=False)


Layer = Conv2D | BiasAdd | ReLU | MaxPool2D | Flatten | Dense | L2Normalize

# e_0 fallback applies when the pre-normalization norm is under NORM_EPS.


def _basis_vector(n: int) -> np.ndarray:
    e = np.zeros(n, dtype=np.float64)
    e[0] = 1.0
    return e


class ComputationGraph:
    """Immutable layer stack plus named weights.

    Shapes are chained and validated at construction; forward/backward reject
    anything the constructor did not see.
    """

    def __init__(self, input_shape, layers, weights):
        self.input_shape = tuple(int(d) for d in input_shape)
        if len(self.input_shape) != 3 or self.input_shape[2] != 3:
            raise GraphError(f"input_shape must be (height, width, 3), got {self.input_shape}")
        self.layers = tuple(layers)
        self.weights = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in weights.items()}
        self.layer_shapes = self._validate()

    def _validate(self):
        shapes = [self.input_shape]
        shape = self.input_shape
        seen_keys = set()
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise GraphError(f"layer {i}: conv2d needs a 3-d input, got {shape}")
                w = self._weight(i, layer.weight, seen_keys)
                if w.ndim != 4 or w.shape[2] != shape[2]:
                    raise GraphError(
                        f"layer {i}: conv2d weight {layer.weight} shape {w.shape} "
                        f"does not match input channels {shape[2]}"
                    )
                if layer.stride < 1 or layer.pad < 0:
                    raise GraphError(f"layer {i}: bad stride/pad")
                ho = (shape[0] + 2 * layer.pad - w.shape[0]) // layer.stride + 1
                wo = (shape[1] + 2 * layer.pad - w.shape[1]) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise GraphError(f"layer {i}: conv2d output collapses to {ho}x{wo}")
                shape = (ho, wo, w.shape[3])
            elif isinstance(layer, BiasAdd):
                w = self._weight(i, layer.weight, seen_keys)
                if w.shape != (shape[-1],):
                    raise GraphError(
                        f"layer {i}: bias shape {w.shape} does not match channels {shape[-1]}"
                    )
            elif isinstance(layer, ReLU):
                pass
            elif isinstance(layer, MaxPool2D):
                if len(shape) != 3:
                    raise GraphError(f"layer {i}: maxpool2d needs a 3-d input, got {shape}")
                if layer.size < 1 or layer.stride < 1:
                    raise GraphError(f"layer {i}: bad pool size/stride")
                ho = (shape[0] - layer.size) // layer.stride + 1
                wo = (shape[1] - layer.size) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise GraphError(f"layer {i}: maxpool2d output collapses to {ho}x{wo}")
                shape = (ho, wo, shape[2])
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise GraphError(f"layer {i}: dense needs a flat input, got {shape}")
                w = self._weight(i, layer.weight, seen_keys)
                if w.ndim != 2 or w.shape[1] != shape[0]:
                    raise GraphError(
                        f"layer {i}: dense weight {layer.weight} shape {w.shape} "
                        f"does not match input size {shape[0]}"
                    )
                shape = (w.shape[0],)
            elif isinstance(layer, L2Normalize):
                if len(shape) != 1:
                    raise GraphError(f"layer {i}: l2normalize needs a flat input, got {shape}")
                if i != len(self.layers) - 1:
                    raise GraphError(f"layer {i}: l2normalize must be the final layer")
            else:
                raise GraphError(f"layer {i}: unknown layer {layer!r}")
            shapes.append(shape)
        if not self.layers or not isinstance(self.layers[-1], L2Normalize):
            raise GraphError("graph must end with an l2normalize layer")
        unused = set(self.weights) - seen_keys
        if unused:
            raise GraphError(f"weights never referenced by any layer: {sorted(unused)}")
        return shapes

    def _weight(self, i, key, seen):
        if key in seen:
            raise GraphError(f"layer {i}: weight key {key!r} already used")
        if key not in self.weights:
            raise GraphError(f"layer {i}: missing weight {key!r}")
        seen.add(key)
        return self.weights[key]

    @property
    def output_dim(self) -> int:
        return self.layer_shapes[-1][0]

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights.values())

    def with_weights(self, weights) -> "ComputationGraph":
        """New graph sharing this one's layer stack."""
        return ComputationGraph(self.input_shape, self.layers, weights)


@dataclass
class ActivationTrace:
    """Every layer's output from one forward pass, plus pooling argmaxes."""

    graph: ComputationGraph
    outputs: list  # outputs[0] is the input, outputs[i+1] the i-th layer's output
    aux: dict  # layer index -> argmax array for maxpool layers

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def forward(graph: ComputationGraph, x: np.ndarray) -> ActivationTrace:
    """Run the graph on one image and record all activations."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != graph.input_shape:
        raise GraphError(f"input shape {x.shape} does not match graph input {graph.input_shape}")
    if not np.isfinite(x).all():
        raise NumericalError("non-finite values in graph input")
    outputs = [x]
    aux = {}
    cur = x
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, Conv2D):
            cur = kernels.conv2d_forward(cur, graph.weights[layer.weight], layer.stride, layer.pad)
        elif isinstance(layer, BiasAdd):
            cur = cur + graph.weights[layer.weight]
        elif isinstance(layer, ReLU):
            cur = np.maximum(cur, 0.0)
        elif isinstance(layer, MaxPool2D):
            cur, argmax = kernels.maxpool_forward(cur, layer.size, layer.stride)
            aux[i] = argmax
        elif isinstance(layer, Flatten):
            cur = cur.reshape(-1)
        elif isinstance(layer, Dense):
            cur = graph.weights[layer.weight] @ cur
        elif isinstance(layer, L2Normalize):
            norm = float(np.sqrt(np.dot(cur, cur)))
            if norm < NORM_EPS:
                cur = _basis_vector(cur.shape[0])
            else:
                cur = cur / norm
        cur = np.ascontiguousarray(cur)
        if not np.isfinite(cur).all():
            raise NumericalError(f"layer {i} ({layer.kind}) produced non-finite values")
        outputs.append(cur)
    return ActivationTrace(graph=graph, outputs=outputs, aux=aux)


def backward(graph: ComputationGraph, trace: ActivationTrace, output_grad: np.ndarray):
    """Reverse-mode pass; returns (param_grads, input_grad)."""
    if trace.graph is not graph:
        raise GraphError("trace was produced by a different graph")
    if len(trace.outputs) != len(graph.layers) + 1:
        raise GraphError("trace does not cover every layer of this graph")
    g = np.ascontiguousarray(output_grad, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise GraphError(
            f"output_grad shape {g.shape} does not match graph output {trace.output.shape}"
        )
    param_grads = {k: np.zeros_like(w) for k, w in graph.weights.items()}
    for i in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[i]
        x_in = trace.outputs[i]
        if isinstance(layer, Conv2D):
            gx, gw = kernels.conv2d_backward(
                x_in, graph.weights[layer.weight], layer.stride, layer.pad, g
            )
            param_grads[layer.weight] += gw
            g = gx
        elif isinstance(layer, BiasAdd):
            axes = tuple(range(g.ndim - 1))
            param_grads[layer.weight] += g.sum(axis=axes) if axes else g
        elif isinstance(layer, ReLU):
            g = g * (x_in > 0)
        elif isinstance(layer, MaxPool2D):
            g = kernels.maxpool_backward(x_in.shape, trace.aux[i], g)
        elif isinstance(layer, Flatten):
            g = g.reshape(x_in.shape)
        elif isinstance(layer, Dense):
            w = graph.weights[layer.weight]
            param_grads[layer.weight] += np.outer(g, x_in)
            g = w.T @ g
        elif isinstance(layer, L2Normalize):
            norm = float(np.sqrt(np.dot(x_in, x_in)))
            if norm < NORM_EPS:
                # Output pinned to e_0: locally constant.
                g = np.zeros_like(x_in)
            else:
                y = x_in / norm
                g = (g - np.dot(g, y) * y) / norm
        g = np.ascontiguousarray(g, dtype=np.float64)
    return param_grads, g


def grad_check(graph: ComputationGraph, x: np.ndarray, epsilon: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference parameter
    gradients of the scalar sum(output).

    Desk-scale only: every parameter coordinate is perturbed twice.
    """
    if graph.parameter_count() >= 10_000:
        raise GraphError("grad_check is limited to graphs with fewer than 10^4 parameters")
    # Perturb a private copy; the caller's weights stay immutable.
    graph = graph.with_weights({k: w.copy() for k, w in graph.weights.items()})
    trace = forward(graph, x)
    ones = np.ones_like(trace.output)
    analytic, _ = backward(graph, trace, ones)

    worst = 0.0
    for key in sorted(graph.weights):
        w = graph.weights[key]
        flat = w.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = float(forward(graph, x).output.sum())
            flat[j] = orig - epsilon
            down = float(forward(graph, x).output.sum())
            flat[j] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic[key].reshape(-1)[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
