import numpy as np
import pytest

from mascara.grad import (
    BiasAdd,
    ComputationGraph,
    Conv2D,
    Dense,
    Flatten,
    L2Normalize,
    MaxPool2D,
    ReLU,
    forward,
)


def small_graph(seed, with_pool=True, with_relu=True):
    """Random desk-scale graph + input, resampled until every ReLU
    pre-activation sits at least 1e-2 from its kink."""
    for attempt in range(50):
        rng = np.random.default_rng((seed, attempt))
        h = int(rng.integers(6, 11))
        cout = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        d = int(rng.integers(3, 7))

        layers = [Conv2D("c1", stride=stride, pad=pad), BiasAdd("b1")]
        if with_relu:
            layers.append(ReLU())
        ho = (h + 2 * pad - k) // stride + 1
        if with_pool and ho >= 4:
            layers.append(MaxPool2D(size=2, stride=2))
            ho = (ho - 2) // 2 + 1
        layers += [Flatten(), Dense("d1"), L2Normalize()]
        weights = {
            "c1": rng.normal(0.0, 0.5, (k, k, 3, cout)),
            "b1": rng.normal(0.0, 0.3, cout),
            "d1": rng.normal(0.0, 0.5, (d, ho * ho * cout)),
        }
        graph = ComputationGraph((h, h, 3), layers, weights)
        x = rng.uniform(-1.0, 1.0, (h, h, 3))
        if _clear_of_kinks(graph, x):
            return graph, x
    raise RuntimeError(f"could not find a kink-free graph for seed {seed}")


def _clear_of_kinks(graph, x, margin=1e-2):
    """True when no ReLU pre-activation sits near zero and no pooling window
    has a near-tie, so small perturbations cannot flip any branch."""
    trace = forward(graph, x)
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, ReLU):
            pre = trace.outputs[i]
            if np.min(np.abs(pre)) <= margin:
                return False
        elif isinstance(layer, MaxPool2D):
            pre = trace.outputs[i]
            h, w, c = pre.shape
            ho = (h - layer.size) // layer.stride + 1
            wo = (w - layer.size) // layer.stride + 1
            for oy in range(ho):
                for ox in range(wo):
                    win = pre[
                        oy * layer.stride : oy * layer.stride + layer.size,
                        ox * layer.stride : ox * layer.stride + layer.size,
                    ].reshape(-1, c)
                    top2 = np.sort(win, axis=0)[-2:]
                    if np.min(top2[1] - top2[0]) <= margin:
                        return False
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
