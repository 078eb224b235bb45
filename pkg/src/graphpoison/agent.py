"""Monte-Carlo policy gradient (REINFORCE) over poison actions, plus the uniform baseline."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .nn import (AdamConfig, ParamTensor, ShapeError, apply_adam, check_finite, glorot, load_checkpoint, log_softmax,
                 relu, save_checkpoint, softmax)
from .rng import stream

RETURN_STD_FLOOR = 1e-8


@dataclass
class PolicyModel:
    """Action distribution ``softmax(relu(x @ W1 + b1) @ W2 + b2)``.

    ``arch="mlp"`` feeds the whole flattened state through one hidden layer with one
    output unit per action. ``arch="shared"`` applies the same two layers to every
    graph's own ``width`` statistics and emits one logit per (graph, action kind), so
    what is learned about one graph transfers to graphs with similar statistics.
    Logit order is always ``kind * n_graphs + graph``.
    """

    params: dict[str, ParamTensor]
    state_dim: int
    n_actions: int
    arch: str = "mlp"
    width: int = 5
    step: int = 0

    @property
    def n_graphs(self) -> int:
        return self.state_dim // self.width

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def init_policy(state_dim: int, n_actions: int, hidden: int = 128, seed: int = 0,
                rng: np.random.Generator | None = None, zero_head: bool = True, arch: str = "mlp",
                width: int = 5) -> PolicyModel:
    """Glorot-initialised policy; ``zero_head`` zeroes the output layer so the
    untrained policy is exactly uniform."""
    rng = rng if rng is not None else stream(seed, "policy-init")
    if arch == "mlp":
        fan_in, fan_out = state_dim, n_actions
    elif arch == "shared":
        if state_dim % width or n_actions % (state_dim // width):
            raise ShapeError(f"shared policy needs state_dim a multiple of {width} and actions per graph")
        fan_in, fan_out = width, n_actions // (state_dim // width)
    else:
        raise ValueError(f"unknown policy architecture {arch!r}")
    layer1 = glorot(rng, fan_in, hidden)
    head = glorot(rng, hidden, fan_out)
    if zero_head:
        head[:] = 0.0
    params = {
        "layer1": ParamTensor(layer1),
        "layer1_bias": ParamTensor(np.zeros((1, hidden))),
        "layer2": ParamTensor(head),
        "layer2_bias": ParamTensor(np.zeros((1, fan_out))),
    }
    return PolicyModel(params, state_dim, n_actions, arch, width)


def _logits(policy: PolicyModel, states: np.ndarray):
    p = policy.params
    x = states if policy.arch == "mlp" else states.reshape(len(states), policy.n_graphs, policy.width)
    z1 = x @ p["layer1"].value + p["layer1_bias"].value
    h1 = relu(z1)
    out = h1 @ p["layer2"].value + p["layer2_bias"].value
    if policy.arch == "shared":
        out = out.transpose(0, 2, 1).reshape(len(states), -1)
    return out, (x, z1, h1)


def _backward(policy: PolicyModel, cache, dlogits: np.ndarray) -> None:
    x, z1, h1 = cache
    p = policy.params
    if policy.arch == "shared":
        kinds = policy.n_actions // policy.n_graphs
        dout = dlogits.reshape(len(dlogits), kinds, policy.n_graphs).transpose(0, 2, 1)
        p["layer2"].grad += np.einsum("bnh,bnk->hk", h1, dout)
        p["layer2_bias"].grad += dout.sum(axis=(0, 1))[None, :]
        dz1 = np.where(z1 > 0, dout @ p["layer2"].value.T, 0.0)
        p["layer1"].grad += np.einsum("bnw,bnh->wh", x, dz1)
        p["layer1_bias"].grad += dz1.sum(axis=(0, 1))[None, :]
        return
    p["layer2"].grad += h1.T @ dlogits
    p["layer2_bias"].grad += dlogits.sum(axis=0, keepdims=True)
    dz1 = np.where(z1 > 0, dlogits @ p["layer2"].value.T, 0.0)
    p["layer1"].grad += x.T @ dz1
    p["layer1_bias"].grad += dz1.sum(axis=0, keepdims=True)


def _as_batch(policy: PolicyModel, state) -> np.ndarray:
    s = np.atleast_2d(np.asarray(state, dtype=np.float64))
    if s.shape[1] != policy.state_dim:
        raise ShapeError(f"state has {s.shape[1]} entries, policy expects {policy.state_dim}")
    return s


def action_probs(policy: PolicyModel, state) -> np.ndarray:
    logits, _ = _logits(policy, _as_batch(policy, state))
    return check_finite(softmax(logits), "action distribution")[0]


def select_action(policy: PolicyModel, state, rng: np.random.Generator) -> tuple[int, float]:
    """Sample an action and return it with its log-probability."""
    logits, _ = _logits(policy, _as_batch(policy, state))
    logp = log_softmax(logits)[0]
    # inverse-CDF draw: exactly one uniform per sample
    cdf = np.cumsum(np.exp(logp))
    action = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), cdf.size - 1))
    return action, float(logp[action])


def random_select(n_actions: int, rng: np.random.Generator) -> int:
    if n_actions < 1:
        raise ValueError("need at least one action")
    return int(rng.integers(n_actions))


@dataclass
class Trajectory:
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)

    def add(self, state, action: int, log_prob: float, reward: float) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.actions.append(int(action))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_reward(self) -> float:
        return float(sum(self.rewards))


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def compute_returns(rewards, gamma: float = 0.99, standardize: bool = True) -> np.ndarray:
    """Discounted returns-to-go, standardised to zero mean and unit variance."""
    if len(rewards) == 0:
        raise ValueError("no rewards to discount")
    g = discounted_returns(rewards, gamma)
    if not standardize:
        return g
    return (g - g.mean()) / max(g.std(), RETURN_STD_FLOOR)


def policy_objective(policy: PolicyModel, states, actions, weights) -> float:
    """``-sum_t w_t * log pi(a_t | s_t)``; gradients accumulate into ``param.grad``."""
    states = _as_batch(policy, np.asarray(states))
    actions = np.asarray(actions, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    logits, cache = _logits(policy, states)
    logp = log_softmax(logits)
    rows = np.arange(len(actions))
    loss = float(-(weights * logp[rows, actions]).sum())
    # d/dlogits of -w * log softmax(logits)[a] = -w * (onehot(a) - probs)
    dlogits = np.exp(logp)
    dlogits[rows, actions] -= 1.0
    dlogits *= weights[:, None]
    _backward(policy, cache, dlogits)
    return loss


class RunningReturnStats:
    """Per-step-position mean/std of the returns of all earlier episodes (Welford).

    Returns-to-go at step 0 sum more rewards than at the last step, so each position
    keeps its own baseline.
    """

    def __init__(self):
        self.count = 0
        self.mean: np.ndarray | None = None
        self._m2: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(self._m2 / self.count)

    def update(self, values) -> None:
        x = np.asarray(values, dtype=np.float64)
        if self.mean is None:
            self.mean = np.zeros_like(x)
            self._m2 = np.zeros_like(x)
        if x.shape != self.mean.shape:
            raise ShapeError(f"episode length changed from {self.mean.size} to {x.size}")
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)


def normalized_returns(rewards, gamma: float, mode: str = "episode",
                       stats: RunningReturnStats | None = None) -> np.ndarray:
    """Policy-gradient weights for one episode.

    ``episode`` standardises the returns within the episode; ``running`` centres and
    scales them with statistics of all earlier episodes' returns (then folds this
    episode in), so whole episodes that beat the run's history are reinforced;
    ``none`` uses raw discounted returns.
    """
    if mode == "episode":
        return compute_returns(rewards, gamma)
    g = discounted_returns(rewards, gamma)
    if mode == "none":
        return g
    if mode != "running":
        raise ValueError(f"unknown return normalisation {mode!r}")
    if stats is None:
        raise ValueError("running normalisation needs a RunningReturnStats")
    weights = (g - stats.mean) / np.maximum(stats.std, RETURN_STD_FLOOR) if stats.count else np.zeros_like(g)
    stats.update(g)
    return weights


def policy_update(policy: PolicyModel, trajectory: Trajectory, gamma: float = 0.99,
                  optimizer: AdamConfig | None = None, returns: np.ndarray | None = None) -> PolicyModel:
    """One optimiser step on the REINFORCE loss of a finished episode.

    ``returns`` defaults to the episode-standardised discounted returns. When every
    weight is zero the gradient vanishes and the step is skipped outright, so Adam
    momentum from earlier episodes cannot move the parameters.
    """
    optimizer = optimizer or AdamConfig()
    if returns is None:
        returns = compute_returns(trajectory.rewards, gamma)
    if not np.any(returns):
        return policy
    policy.zero_grad()
    policy_objective(policy, trajectory.states, trajectory.actions, returns)
    policy.step += 1
    apply_adam(policy.params, optimizer, policy.step)
    return policy


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "reinforce"  # or "random"
    hidden: int = 128
    gamma: float = 0.99
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    # raw discounted returns with the per-graph scorer won most paired runs in pilots;
    # return_norm="episode", arch="mlp" gives the textbook flat recipe
    return_norm: str = "none"  # "episode", "running" or "none"
    zero_head: bool = True
    arch: str = "shared"  # or "mlp"

    def __post_init__(self):
        if self.kind not in ("reinforce", "random"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.return_norm not in ("episode", "running", "none"):
            raise ValueError(f"unknown return normalisation {self.return_norm!r}")


class Agent:
    """Thin stateful wrapper used by the runner; ``kind`` picks learned vs uniform."""

    def __init__(self, cfg: AgentConfig, state_dim: int, n_actions: int, seed: int):
        self.cfg = cfg
        self.n_actions = n_actions
        self.rng = stream(seed, "agent", cfg.kind)
        self.policy = (
            init_policy(state_dim, n_actions, cfg.hidden, rng=stream(seed, "policy-init"),
                        zero_head=cfg.zero_head, arch=cfg.arch)
            if cfg.kind == "reinforce" else None
        )
        self.return_stats = RunningReturnStats()

    def act(self, state: np.ndarray) -> tuple[int, float]:
        if self.policy is None:
            return random_select(self.n_actions, self.rng), float(-np.log(self.n_actions))
        return select_action(self.policy, state, self.rng)

    def learn(self, trajectory: Trajectory) -> None:
        if self.policy is None:
            return
        weights = normalized_returns(trajectory.rewards, self.cfg.gamma, self.cfg.return_norm, self.return_stats)
        policy_update(self.policy, trajectory, self.cfg.gamma, self.cfg.optimizer, returns=weights)

    def snapshot(self) -> "Agent":
        return copy.deepcopy(self)


def save_policy(policy: PolicyModel, path, meta: dict | None = None):
    info = {"kind": "policy", "arch": policy.arch, "state_dim": policy.state_dim, "n_actions": policy.n_actions,
            "width": policy.width, "step": policy.step}
    info.update(meta or {})
    return save_checkpoint(path, policy.params, info)


def load_policy(path) -> PolicyModel:
    tensors, m = load_checkpoint(path)
    if m.get("kind") != "policy":
        raise ValueError(f"{path} is not a policy checkpoint")
    return PolicyModel(tensors, m["state_dim"], m["n_actions"], m["arch"], m["width"], m["step"])
