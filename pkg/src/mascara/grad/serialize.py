"""Model (de)serialization.

One JSON document holds the layer stack and all weights. Arrays are stored as
base64 of their little-endian float64 bytes, so a save/load round trip is
bit-exact regardless of locale or float printing.
"""

import base64
import json

import numpy as np

from mascara.grad import graph as g

FORMAT = "mascara-model"
VERSION = 1

_LAYER_TYPES = {
    "conv2d": g.Conv2D,
    "bias_add": g.BiasAdd,
    "relu": g.ReLU,
    "maxpool2d": g.MaxPool2D,
    "flatten": g.Flatten,
    "dense": g.Dense,
    "l2normalize": g.L2Normalize,
}


def _layer_to_dict(layer):
    d = {"kind": layer.kind}
    for name in layer.__dataclass_fields__:
        if name == "kind":
            continue
        d[name] = getattr(layer, name)
    return d


def _layer_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _LAYER_TYPES:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _LAYER_TYPES[kind](**d)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    # frombuffer views are read-only; copy so downstream kernels get writable buffers
    a = np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).astype(np.float64)
    return np.ascontiguousarray(a)


def graph_to_dict(cg: g.ComputationGraph) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "input_shape": list(cg.input_shape),
        "layers": [_layer_to_dict(layer) for layer in cg.layers],
        "weights": {k: _encode_array(w) for k, w in sorted(cg.weights.items())},
    }


def graph_from_dict(doc: dict) -> g.ComputationGraph:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    layers = [_layer_from_dict(d) for d in doc["layers"]]
    weights = {k: _decode_array(d) for k, d in doc["weights"].items()}
    return g.ComputationGraph(doc["input_shape"], layers, weights)


def save_graph(cg: g.ComputationGraph, path) -> None:
    with open(path, "w") as f:
        json.dump(graph_to_dict(cg), f, sort_keys=True)
        f.write("\n")


def load_graph(path) -> g.ComputationGraph:
    with open(path) as f:
        return graph_from_dict(json.load(f))
