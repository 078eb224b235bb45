"""Poisoning MDP over a training set: perturb one graph, retrain the clone one epoch, score."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import graphs as gc
from .dataset import Dataset
from .gnn import GnnModel, TrainConfig, UntrainedModelError, clone_model, evaluate, retrain_one_epoch
from .graphs import STATS_WIDTH, Graph, stats_matrix

STD_FLOOR = 1e-8


class ActionKind(enum.IntEnum):
    SUBGRAPH_ADD = 0
    NODE_DELETE = 1
    NODE_ADD = 2
    EDGE_DELETE = 3
    EDGE_ADD = 4


class EpisodeExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    poison_points: int = 10
    gnp_nodes: int = 10
    gnp_p_edge: float = 0.75
    # "episode": reward against the accuracy at episode start;
    # "differential": against the accuracy after the previous step
    reward_mode: str = "episode"
    extended_actions: bool = False

    def __post_init__(self):
        if self.poison_points < 1:
            raise ValueError("poison_points must be >= 1")
        if self.reward_mode not in ("episode", "differential"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")


@dataclass(frozen=True)
class ActionSpec:
    graph_index: int
    kind: ActionKind = ActionKind.SUBGRAPH_ADD


@dataclass(frozen=True)
class EnvState:
    vector: np.ndarray
    poison_step: int


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: EnvState
    acc_after: float
    info: dict = field(default_factory=dict)


def encode_state(train: Sequence[Graph], mean: np.ndarray | None = None, std: np.ndarray | None = None) -> np.ndarray:
    """Flattened per-graph summary statistics, each channel standardised.

    ``mean``/``std`` default to the channel statistics of ``train`` itself; the
    environment passes the episode-start values so later states stay comparable.
    """
    if len(train) == 0:
        raise ValueError("cannot encode an empty training set")
    raw = stats_matrix(train)
    if mean is None:
        mean = raw.mean(axis=0)
    if std is None:
        std = raw.std(axis=0)
    return ((raw - mean) / np.maximum(std, STD_FLOOR)).reshape(-1)


def decode_action(action: int | ActionSpec, n_graphs: int, extended: bool) -> ActionSpec:
    if isinstance(action, ActionSpec):
        spec = action
    else:
        a = int(action)
        limit = n_graphs * (len(ActionKind) if extended else 1)
        if not 0 <= a < limit:
            raise ValueError(f"action {a} outside [0, {limit})")
        spec = ActionSpec(a % n_graphs, ActionKind(a // n_graphs))
    if not 0 <= spec.graph_index < n_graphs:
        raise ValueError(f"graph index {spec.graph_index} outside [0, {n_graphs})")
    if spec.kind is not ActionKind.SUBGRAPH_ADD and not extended:
        raise ValueError(f"{spec.kind.name} requires extended_actions")
    return spec


def apply_action(g: Graph, spec: ActionSpec, cfg: EnvConfig, rng: np.random.Generator) -> tuple[Graph, dict]:
    info = {"kind": spec.kind.name.lower(), "feasible": True, "gnp_edges": None}
    if spec.kind is ActionKind.SUBGRAPH_ADD:
        sub = gc.generate_gnp(cfg.gnp_nodes, cfg.gnp_p_edge, rng)
        info["gnp_edges"] = sub.edge_count
        return gc.insert_subgraph(g, sub, rng), info
    if spec.kind is ActionKind.NODE_ADD:
        out, ok = gc.node_add(g)
    elif spec.kind is ActionKind.NODE_DELETE:
        out, ok = gc.node_delete(g, rng)
    elif spec.kind is ActionKind.EDGE_ADD:
        out, ok = gc.edge_add(g, rng)
    else:
        out, ok = gc.edge_delete(g, rng)
    info["feasible"] = ok
    return out, info


class PoisonEnv:
    """One run's environment. The original data and model are only ever read.

    ``reset`` clones the trained model; each ``step`` perturbs one graph of the
    cloned training list, retrains the clone for one epoch and rewards the drop in
    test accuracy.
    """

    def __init__(self, train: Dataset, test: Dataset, model: GnnModel, train_cfg: TrainConfig,
                 cfg: EnvConfig | None = None):
        if len(train) == 0 or len(test) == 0:
            raise ValueError("train and test sets must be non-empty")
        self.train = train
        self.test = test
        self.model = model
        self.train_cfg = train_cfg
        self.cfg = cfg or EnvConfig()
        self.baseline_acc: float | None = None
        self._active = False

    @property
    def n_actions(self) -> int:
        return len(self.train) * (len(ActionKind) if self.cfg.extended_actions else 1)

    @property
    def state_dim(self) -> int:
        return STATS_WIDTH * len(self.train)

    def reset(self) -> EnvState:
        if not self.model.trained:
            raise UntrainedModelError("the victim model has not been trained")
        self.graphs = list(self.train)
        self.clone = clone_model(self.model)
        raw = stats_matrix(self.graphs)
        self._mean, self._std = raw.mean(axis=0), raw.std(axis=0)
        if self.baseline_acc is None:
            self.baseline_acc = evaluate(self.model, self.test)
        self.acc_start = self.baseline_acc
        self.acc_prev = self.baseline_acc
        self.poison_step = 0
        self._active = True
        return self._state()

    def _state(self) -> EnvState:
        return EnvState(encode_state(self.graphs, self._mean, self._std), self.poison_step)

    def step(self, action: int | ActionSpec, rng: np.random.Generator) -> StepOutcome:
        """Apply one poison point.

        ``rng`` is split in two: the first child drives the perturbation (gnp draw,
        then bridge endpoints), the second the retraining shuffle. Replaying the same
        generator therefore reproduces the perturbation independently of training.
        """
        if not self._active:
            raise RuntimeError("call reset() before step()")
        if self.poison_step >= self.cfg.poison_points:
            raise EpisodeExhaustedError(f"episode already used its {self.cfg.poison_points} poison points")
        spec = decode_action(action, len(self.graphs), self.cfg.extended_actions)
        perturb_rng, train_rng = rng.spawn(2)
        before = self.graphs[spec.graph_index]
        after, info = apply_action(before, spec, self.cfg, perturb_rng)
        self.graphs[spec.graph_index] = after
        retrain_one_epoch(self.clone, self.graphs, self.train_cfg, train_rng)
        acc_after = evaluate(self.clone, self.test)
        reward = self.acc_prev - acc_after
        if self.cfg.reward_mode == "differential":
            self.acc_prev = acc_after
        self.poison_step += 1
        info.update(
            graph_index=spec.graph_index,
            nodes_added=after.node_count - before.node_count,
            edges_added=after.edge_count - before.edge_count,
        )
        return StepOutcome(reward, self._state(), acc_after, info)

    def perturbed_dataset(self) -> Dataset:
        return Dataset(tuple(self.graphs), self.train.role)
