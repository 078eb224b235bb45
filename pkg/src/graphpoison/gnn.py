"""Two-layer graph-convolution classifier with mean readout.

Per graph ``g`` with normalised propagation matrix ``P``::

    X0 = in_degrees(g)[:, None]
    H1 = relu(P @ X0 @ W1 + b1)
    H2 = relu(P @ H1 @ W2 + b2)
    probs = softmax(mean_rows(H2) @ W3 + b3)
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .graphs import NUM_CLASSES, Graph, in_degrees
from .nn import (AdamConfig, ParamTensor, apply_adam, check_finite, cross_entropy, glorot, load_checkpoint, relu,
                 save_checkpoint, softmax)
from .rng import stream

# graphs above this size use a sparse operator unless they are dense anyway
_DENSE_MAX_NODES = 400
_DENSE_MIN_FILL = 0.05


def propagation_matrix(g: Graph) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    n = g.node_count
    a = np.eye(n)
    i, j = g.edges[:, 0], g.edges[:, 1]
    a[i, j] = 1.0
    a[j, i] = 1.0
    s = 1.0 / np.sqrt(g.degrees + 1.0)
    return a * s[:, None] * s[None, :]


def _sparse_propagation(g: Graph) -> sp.csr_matrix:
    n = g.node_count
    i, j = g.edges[:, 0], g.edges[:, 1]
    s = 1.0 / np.sqrt(g.degrees + 1.0)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = s[rows] * s[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class _GraphInput:
    prop: object  # dense ndarray or CSR matrix; symmetric either way
    px: np.ndarray  # P @ X0, shape (n, 1)


def _graph_input(g: Graph) -> _GraphInput:
    cached = g.__dict__.get("_gcn_input")
    if cached is None:
        n = g.node_count
        fill = (2 * g.edge_count + n) / max(n * n, 1)
        if n <= _DENSE_MAX_NODES or fill >= _DENSE_MIN_FILL:
            prop = propagation_matrix(g)
        else:
            prop = _sparse_propagation(g)
        px = np.asarray(prop @ in_degrees(g)[:, None])
        cached = _GraphInput(prop, px)
        # Graph is frozen; the cache lives beside cached_property values
        g.__dict__["_gcn_input"] = cached
    return cached


class UntrainedModelError(ValueError):
    pass


@dataclass
class GnnModel:
    hidden_dim: int
    num_classes: int
    params: dict[str, ParamTensor]
    step: int = 0  # optimiser steps taken so far; 0 means never trained

    @property
    def conv1(self) -> ParamTensor:
        return self.params["conv1"]

    @property
    def conv2(self) -> ParamTensor:
        return self.params["conv2"]

    @property
    def head(self) -> ParamTensor:
        return self.params["head"]

    @property
    def trained(self) -> bool:
        return self.step > 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def init_model(hidden_dim: int = 64, num_classes: int = NUM_CLASSES, seed: int = 0,
               rng: np.random.Generator | None = None) -> GnnModel:
    rng = rng if rng is not None else stream(seed, "gnn-init")
    h, c = hidden_dim, num_classes
    params = {
        "conv1": ParamTensor(glorot(rng, 1, h)),
        "conv1_bias": ParamTensor(np.zeros((1, h))),
        "conv2": ParamTensor(glorot(rng, h, h)),
        "conv2_bias": ParamTensor(np.zeros((1, h))),
        "head": ParamTensor(glorot(rng, h, c)),
        "head_bias": ParamTensor(np.zeros((1, c))),
    }
    return GnnModel(hidden_dim, num_classes, params)


def zero_model(hidden_dim: int = 64, num_classes: int = NUM_CLASSES) -> GnnModel:
    model = init_model(hidden_dim, num_classes)
    for p in model.params.values():
        p.value.fill(0.0)
    return model


def clone_model(model: GnnModel) -> GnnModel:
    return copy.deepcopy(model)


def _forward_one(model: GnnModel, g: Graph):
    inp = _graph_input(g)
    p = model.params
    z1 = inp.px @ p["conv1"].value + p["conv1_bias"].value
    h1 = relu(z1)
    z2 = np.asarray(inp.prop @ h1) @ p["conv2"].value + p["conv2_bias"].value
    h2 = relu(z2)
    hg = h2.mean(axis=0, keepdims=True)
    logits = hg @ p["head"].value + p["head_bias"].value
    return logits, (inp, z1, h1, z2, hg)


def _backward_one(model: GnnModel, cache, dlogits: np.ndarray) -> None:
    inp, z1, h1, z2, hg = cache
    p = model.params
    p["head"].grad += hg.T @ dlogits
    p["head_bias"].grad += dlogits
    dhg = dlogits @ p["head"].value.T
    n = z2.shape[0]
    dz2 = np.where(z2 > 0, dhg / n, 0.0)
    ph1 = np.asarray(inp.prop @ h1)
    p["conv2"].grad += ph1.T @ dz2
    p["conv2_bias"].grad += dz2.sum(axis=0, keepdims=True)
    # P is symmetric so P^T @ x == P @ x
    dh1 = np.asarray(inp.prop @ (dz2 @ p["conv2"].value.T))
    dz1 = np.where(z1 > 0, dh1, 0.0)
    p["conv1"].grad += inp.px.T @ dz1
    p["conv1_bias"].grad += dz1.sum(axis=0, keepdims=True)


def forward(model: GnnModel, g: Graph) -> np.ndarray:
    """Class distribution for one graph, shape ``(num_classes,)``."""
    logits, _ = _forward_one(model, g)
    return check_finite(softmax(logits)[0], "class distribution")


def predict_proba(model: GnnModel, graphs: Iterable[Graph]) -> np.ndarray:
    return np.array([forward(model, g) for g in graphs])


def loss_and_grads(model: GnnModel, graphs: Sequence[Graph], labels=None) -> float:
    """Mean cross-entropy over ``graphs``; gradients are written into ``param.grad``."""
    labels = [g.label for g in graphs] if labels is None else list(labels)
    model.zero_grad()
    outs = [_forward_one(model, g) for g in graphs]
    logits = np.concatenate([o[0] for o in outs])
    loss, dlogits = cross_entropy(softmax(logits), labels)
    for (_, cache), d in zip(outs, dlogits):
        _backward_one(model, cache, d[None, :])
    return loss


def dataset_loss(model: GnnModel, graphs: Sequence[Graph]) -> float:
    logits = np.concatenate([_forward_one(model, g)[0] for g in graphs])
    loss, _ = cross_entropy(softmax(logits), [g.label for g in graphs])
    return loss


def evaluate(model: GnnModel, graphs: Sequence[Graph]) -> float:
    """Fraction of graphs whose argmax class (lowest index on ties) matches the label."""
    if len(graphs) == 0:
        raise ValueError("cannot evaluate on an empty set")
    hits = sum(int(np.argmax(forward(model, g)) == g.label) for g in graphs)
    return hits / len(graphs)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    batch_size: int = 32
    hidden_dim: int = 64
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    # warm-start retraining keeps the Adam moments of the baseline run
    carry_moments: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None = None


def _run_epoch(model: GnnModel, graphs: Sequence[Graph], cfg: TrainConfig, rng: np.random.Generator) -> None:
    order = rng.permutation(len(graphs))
    for start in range(0, len(order), cfg.batch_size):
        batch = [graphs[k] for k in order[start:start + cfg.batch_size]]
        loss_and_grads(model, batch)
        model.step += 1
        apply_adam(model.params, cfg.optimizer, model.step)


def train(model: GnnModel, train_set: Sequence[Graph], cfg: TrainConfig, test_set: Sequence[Graph] | None = None,
          rng: np.random.Generator | None = None) -> tuple[GnnModel, list[EpochMetrics]]:
    """Mini-batch training in place; returns the model and per-epoch metrics.

    Entry 0 of the history holds the metrics before the first update, so
    ``history[-1].loss < history[0].loss`` reads as "training helped". Loss and
    accuracies are full passes over the sets, not running batch averages.
    """
    if len(train_set) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = rng if rng is not None else stream(cfg.seed, "gnn-train")

    def snapshot(epoch):
        return EpochMetrics(
            epoch,
            dataset_loss(model, train_set),
            evaluate(model, train_set),
            evaluate(model, test_set) if test_set is not None and len(test_set) else None,
        )

    history = [snapshot(0)]
    for epoch in range(1, cfg.epochs + 1):
        _run_epoch(model, train_set, cfg, rng)
        history.append(snapshot(epoch))
    return model, history


def retrain_one_epoch(model: GnnModel, perturbed_train: Sequence[Graph], cfg: TrainConfig,
                      rng: np.random.Generator) -> GnnModel:
    """Warm-start ``model`` (in place) for exactly one more epoch on ``perturbed_train``."""
    if len(perturbed_train) == 0:
        raise ValueError("cannot retrain on an empty dataset")
    if not cfg.carry_moments:
        for p in model.params.values():
            p.reset_moments()
        model.step = 0
    _run_epoch(model, perturbed_train, cfg, rng)
    return model


def save_model(model: GnnModel, path, meta: dict | None = None):
    info = {"kind": "gnn", "hidden_dim": model.hidden_dim, "num_classes": model.num_classes, "step": model.step}
    info.update(meta or {})
    return save_checkpoint(path, model.params, info)


def load_model(path) -> GnnModel:
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") != "gnn":
        raise ValueError(f"{path} is not a classifier checkpoint")
    return GnnModel(manifest["hidden_dim"], manifest["num_classes"], tensors, manifest["step"])
