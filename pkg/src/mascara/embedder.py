"""Embedding models and their losses.

Two desk-scale CNN families play the surrogate/target roles. Both map an
aligned RGB image in [0,1] to a unit vector; identity decisions elsewhere
compare those vectors by cosine distance.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from mascara.grad import (
    BiasAdd,
    ComputationGraph,
    Conv2D,
    Dense,
    Flatten,
    L2Normalize,
    MaxPool2D,
    ReLU,
    backward,
    forward,
)
from mascara.grad.serialize import load_graph, save_graph

EMBEDDING_DIM = 64
ATTACK_MARGIN = 0.8  # variant-loss margin; fixed, unlike the training margin
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EmbedderSpec:
    role: str  # "surrogate" | "target"
    input_size: tuple[int, int]  # (height, width)
    architecture: str
    seed: int

    def __post_init__(self):
        if self.role not in ("surrogate", "target"):
            raise ValueError(f"role must be surrogate or target, got {self.role!r}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))


SURROGATE_SPEC = None  # assigned below, after ARCHITECTURES
TARGET_SPEC = None


@dataclass
class EmbedderModel:
    spec: EmbedderSpec
    graph: ComputationGraph

    @property
    def input_shape(self):
        return self.graph.input_shape


def _slim3_layers(h, w):
    return [
        Conv2D("conv1", stride=4, pad=2),
        BiasAdd("bias1"),
        ReLU(),
        MaxPool2D(size=2, stride=2),
        Conv2D("conv2", stride=2, pad=1),
        BiasAdd("bias2"),
        ReLU(),
        MaxPool2D(size=2, stride=2),
        Flatten(),
        Dense("fc"),
        BiasAdd("fc_bias"),
        L2Normalize(),
    ]


def _slim3_weights(h, w, rng):
    h1 = ((h + 4 - 5) // 4 + 1) // 2
    w1 = ((w + 4 - 5) // 4 + 1) // 2
    h2 = ((h1 + 2 - 3) // 2 + 1) // 2
    w2 = ((w1 + 2 - 3) // 2 + 1) // 2
    flat = h2 * w2 * 16
    return {
        "conv1": rng.normal(0.0, np.sqrt(2.0 / (5 * 5 * 3)), (5, 5, 3, 8)),
        "bias1": np.zeros(8),
        "conv2": rng.normal(0.0, np.sqrt(2.0 / (3 * 3 * 8)), (3, 3, 8, 16)),
        "bias2": np.zeros(16),
        "fc": rng.normal(0.0, np.sqrt(1.0 / flat), (EMBEDDING_DIM, flat)),
        "fc_bias": np.zeros(EMBEDDING_DIM),
    }


def _wide4_layers(h, w):
    return [
        Conv2D("conv1", stride=2, pad=1),
        BiasAdd("bias1"),
        ReLU(),
        MaxPool2D(size=2, stride=2),
        Conv2D("conv2", stride=2, pad=1),
        BiasAdd("bias2"),
        ReLU(),
        Conv2D("conv3", stride=2, pad=1),
        BiasAdd("bias3"),
        ReLU(),
        Flatten(),
        Dense("fc"),
        BiasAdd("fc_bias"),
        L2Normalize(),
    ]


def _wide4_weights(h, w, rng):
    h1 = ((h + 2 - 3) // 2 + 1) // 2
    w1 = ((w + 2 - 3) // 2 + 1) // 2
    h2 = (h1 + 2 - 3) // 2 + 1
    w2 = (w1 + 2 - 3) // 2 + 1
    h3 = (h2 + 2 - 3) // 2 + 1
    w3 = (w2 + 2 - 3) // 2 + 1
    flat = h3 * w3 * 16
    return {
        "conv1": rng.normal(0.0, np.sqrt(2.0 / (3 * 3 * 3)), (3, 3, 3, 6)),
        "bias1": np.zeros(6),
        "conv2": rng.normal(0.0, np.sqrt(2.0 / (3 * 3 * 6)), (3, 3, 6, 12)),
        "bias2": np.zeros(12),
        "conv3": rng.normal(0.0, np.sqrt(2.0 / (3 * 3 * 12)), (3, 3, 12, 16)),
        "bias3": np.zeros(16),
        "fc": rng.normal(0.0, np.sqrt(1.0 / flat), (EMBEDDING_DIM, flat)),
        "fc_bias": np.zeros(EMBEDDING_DIM),
    }


ARCHITECTURES = {
    "slim3": (_slim3_layers, _slim3_weights),
    "wide4": (_wide4_layers, _wide4_weights),
}

SURROGATE_SPEC = EmbedderSpec(role="surrogate", input_size=(160, 160), architecture="slim3", seed=101)
TARGET_SPEC = EmbedderSpec(role="target", input_size=(112, 112), architecture="slim3", seed=202)


def check_distinct(surrogate: EmbedderSpec, target: EmbedderSpec) -> None:
    """Black-box setting: the two models must differ in architecture or seed."""
    if surrogate.architecture == target.architecture and surrogate.seed == target.seed:
        raise ValueError("surrogate and target specs must differ in architecture or seed")


def build_model(spec: EmbedderSpec) -> EmbedderModel:
    """Seeded initialization of an untrained model."""
    layers_fn, weights_fn = ARCHITECTURES[spec.architecture]
    h, w = spec.input_size
    rng = np.random.default_rng(spec.seed)
    graph = ComputationGraph((h, w, 3), layers_fn(h, w), weights_fn(h, w, rng))
    return EmbedderModel(spec=spec, graph=graph)


@dataclass(frozen=True)
class EnsembleModel:
    """Several embedders attacked as one: embeddings concatenate (rescaled so
    cosine distance is the member mean), gradients average. Attack-side only;
    galleries always hold single-model embeddings."""

    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        shapes = {m.input_shape for m in self.members}
        if len(shapes) != 1:
            raise ValueError(f"ensemble members disagree on input shape: {sorted(shapes)}")

    @property
    def input_shape(self):
        return self.members[0].input_shape


def embed(model, image: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of one aligned image."""
    if isinstance(model, EnsembleModel):
        parts = [forward(m.graph, image).output for m in model.members]
        return np.concatenate(parts) / np.sqrt(len(parts))
    return forward(model.graph, image).output


@dataclass(frozen=True)
class TripletBatch:
    """Anchor/positive/negative images for one triplet-loss evaluation."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    margin: float = 0.2

    def __post_init__(self):
        shapes = {self.anchor.shape, self.positive.shape, self.negative.shape}
        if len(shapes) != 1:
            raise ValueError(f"triplet images must share one shape, got {sorted(shapes)}")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


def batch_triplet_loss(model: EmbedderModel, batch: TripletBatch) -> float:
    return triplet_loss(
        embed(model, batch.anchor),
        embed(model, batch.positive),
        embed(model, batch.negative),
        margin=batch.margin,
    )


def triplet_loss(anchor_emb, positive_emb, negative_emb, margin: float = 0.2) -> float:
    """Classic triplet loss on embeddings: hinge of squared distances plus margin."""
    dp = anchor_emb - positive_emb
    dn = anchor_emb - negative_emb
    return max(0.0, float(np.dot(dp, dp) - np.dot(dn, dn)) + margin)


def attack_loss(anchor_emb, positive_emb, negative_emb) -> float:
    """Inverted triplet loss (margin 0.8): minimizing it pulls the anchor
    toward the negative identity and away from its own."""
    dp = anchor_emb - positive_emb
    dn = anchor_emb - negative_emb
    return max(0.0, float(np.dot(dn, dn) - np.dot(dp, dp)) + ATTACK_MARGIN)


def unit_mean(embeddings) -> np.ndarray:
    """Mean embedding renormalized to unit length (reference vector for a set)."""
    m = np.mean(np.asarray(embeddings, dtype=np.float64), axis=0)
    norm = float(np.linalg.norm(m))
    if norm < NORM_EPS:
        e = np.zeros(m.shape[0])
        e[0] = 1.0
        return e
    return m / norm


def input_gradient(model, x, positives, negative) -> np.ndarray:
    """Gradient w.r.t. x of the mean attack loss over the positive set.

    The positive and negative embeddings are treated as constants; only the
    anchor path is differentiated.
    """
    if isinstance(model, EnsembleModel):
        grads = [input_gradient(m, x, positives, negative) for m in model.members]
        return np.mean(grads, axis=0)
    positives = list(positives)
    if not positives:
        raise ValueError("positives must contain at least one image")
    pos_embs = [embed(model, p) for p in positives]
    neg_emb = embed(model, negative)

    trace = forward(model.graph, x)
    a = trace.output
    grad_a = np.zeros_like(a)
    for p_emb in pos_embs:
        if attack_loss(a, p_emb, neg_emb) > 0.0:
            # d/da [|a-n|^2 - |a-p|^2] = 2 (p - n)
            grad_a += 2.0 * (p_emb - neg_emb)
    grad_a /= len(pos_embs)
    if not grad_a.any():
        return np.zeros(model.graph.input_shape)
    _, gx = backward(model.graph, trace, grad_a)
    return gx


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    steps_per_epoch: int = 60
    batch_size: int = 8
    learning_rate: float = 0.05
    momentum: float = 0.9
    margin: float = 0.2
    seed: int = 0


MIN_IDENTITIES = 8
MIN_IMAGES_PER_IDENTITY = 4


def train(spec: EmbedderSpec, dataset: dict, config: TrainConfig):
    """Triplet-loss SGD over a dict of identity -> list of aligned images.

    Deterministic under (spec.seed, config.seed). Returns the trained model
    and the per-epoch mean loss trace.
    """
    ids = sorted(dataset)
    if len(ids) < MIN_IDENTITIES:
        raise ValueError(f"need at least {MIN_IDENTITIES} identities, got {len(ids)}")
    for ident in ids:
        if len(dataset[ident]) < MIN_IMAGES_PER_IDENTITY:
            raise ValueError(
                f"identity {ident!r} has {len(dataset[ident])} images, "
                f"need at least {MIN_IMAGES_PER_IDENTITY}"
            )

    model = build_model(spec)
    weights = {k: w.copy() for k, w in model.graph.weights.items()}
    graph = model.graph.with_weights(weights)
    velocity = {k: np.zeros_like(w) for k, w in weights.items()}
    rng = np.random.default_rng(config.seed)

    loss_trace = []
    for _epoch in range(config.epochs):
        epoch_losses = []
        for _step in range(config.steps_per_epoch):
            grads = {k: np.zeros_like(w) for k, w in weights.items()}
            batch_loss = 0.0
            for _b in range(config.batch_size):
                ia, inn = rng.choice(len(ids), size=2, replace=False)
                imgs_a = dataset[ids[ia]]
                ka, kp = rng.choice(len(imgs_a), size=2, replace=False)
                kn = int(rng.integers(len(dataset[ids[inn]])))
                t_a = forward(graph, imgs_a[ka])
                t_p = forward(graph, imgs_a[kp])
                t_n = forward(graph, dataset[ids[inn]][kn])
                ea, ep, en = t_a.output, t_p.output, t_n.output
                loss = triplet_loss(ea, ep, en, margin=config.margin)
                batch_loss += loss
                if loss <= 0.0:
                    continue
                ga = 2.0 * (en - ep)
                gp = -2.0 * (ea - ep)
                gn = 2.0 * (ea - en)
                for trace, g_emb in ((t_a, ga), (t_p, gp), (t_n, gn)):
                    pg, _ = backward(graph, trace, g_emb)
                    for k in grads:
                        grads[k] += pg[k]
            epoch_losses.append(batch_loss / config.batch_size)
            for k in sorted(weights):
                velocity[k] = config.momentum * velocity[k] - (
                    config.learning_rate / config.batch_size
                ) * grads[k]
                weights[k] += velocity[k]
        loss_trace.append(float(np.mean(epoch_losses)))

    return EmbedderModel(spec=spec, graph=graph), loss_trace


def save_model(model: EmbedderModel, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    save_graph(model.graph, os.path.join(directory, "model.json"))
    sidecar = {
        "role": model.spec.role,
        "input_size": list(model.spec.input_size),
        "architecture": model.spec.architecture,
        "seed": model.spec.seed,
    }
    with open(os.path.join(directory, "spec.json"), "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)
        f.write("\n")


def load_model(directory) -> EmbedderModel:
    with open(os.path.join(directory, "spec.json")) as f:
        sidecar = json.load(f)
    spec = EmbedderSpec(
        role=sidecar["role"],
        input_size=tuple(sidecar["input_size"]),
        architecture=sidecar["architecture"],
        seed=sidecar["seed"],
    )
    graph = load_graph(os.path.join(directory, "model.json"))
    if graph.input_shape != (*spec.input_size, 3):
        raise ValueError("model file and spec sidecar disagree on input size")
    return EmbedderModel(spec=spec, graph=graph)
