"""Episode and run orchestration, paired policy comparison, and record persistence."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gnn
from .agent import Agent, AgentConfig, Trajectory, save_policy
from .dataset import Dataset, DatasetConfig, generate
from .env import EnvConfig, PoisonEnv
from .gnn import GnnModel, TrainConfig
from .nn import AdamConfig
from .rng import seed_words, stream

log = logging.getLogger(__name__)

POLICIES = ("reinforce", "random")
RECORD_FIELDS = (
    "episode", "step", "action", "acc_after", "reward",
    "graph_index", "kind", "feasible", "gnp_edges", "nodes_added", "edges_added",
)


@dataclass(frozen=True)
class AttackConfig:
    n_episodes: int = 175
    n_runs: int = 10
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    policy: str = "reinforce"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    jobs: int = 1
    window: int = 10

    def __post_init__(self):
        if self.n_episodes < 1 or self.n_runs < 1 or self.jobs < 1:
            raise ValueError("n_episodes, n_runs and jobs must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
            if len(self.seeds) != self.n_runs:
                raise ValueError(f"{len(self.seeds)} seeds given for {self.n_runs} runs")
            if len(set(self.seeds)) != len(self.seeds):
                raise ValueError("run seeds must be distinct")

    @property
    def run_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds is not None else tuple(range(self.seed, self.seed + self.n_runs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.run_seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        train = dict(d.pop("train", {}))
        if "optimizer" in train:
            train["optimizer"] = AdamConfig(**train["optimizer"])
        agent = dict(d.pop("agent", {}))
        if "optimizer" in agent:
            agent["optimizer"] = AdamConfig(**agent["optimizer"])
        seeds = d.pop("seeds", None)
        return cls(
            dataset=DatasetConfig(**d.pop("dataset", {})),
            train=TrainConfig(**train),
            env=EnvConfig(**d.pop("env", {})),
            agent=AgentConfig(**agent),
            seeds=tuple(seeds) if seeds is not None else None,
            **d,
        )


@dataclass
class StepRecord:
    episode: int
    step: int
    action: int
    acc_after: float
    reward: float
    graph_index: int
    kind: str
    feasible: bool
    gnp_edges: int | None
    nodes_added: int
    edges_added: int

    def row(self) -> list:
        return [
            self.episode, self.step, self.action, repr(self.acc_after), repr(self.reward),
            self.graph_index, self.kind, int(self.feasible),
            "" if self.gnp_edges is None else self.gnp_edges, self.nodes_added, self.edges_added,
        ]


@dataclass
class EpisodeRecord:
    episode: int
    steps: list[StepRecord]

    @property
    def reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]


@dataclass
class RunRecord:
    seed: int
    policy: str
    baseline_acc: float | None = None
    dataset_digest: str | None = None
    train_labels: list[int] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    error: str | None = None

    @property
    def episode_rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.episodes])

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "policy": self.policy,
            "baseline_acc": self.baseline_acc,
            "dataset_digest": self.dataset_digest,
            "train_labels": self.train_labels,
            "episodes_done": len(self.episodes),
            "status": "failed" if self.error else "ok",
            "error": self.error,
        }


def step_seed_words(run_seed: int, episode: int, step: int) -> list[int]:
    """Entropy of the generator handed to ``PoisonEnv.step``; identical across policies."""
    return seed_words(run_seed, "step", episode, step)


def run_episode(env: PoisonEnv, agent: Agent, run_seed: int, episode: int) -> EpisodeRecord:
    """Play one full episode of ``env.cfg.poison_points`` steps, then update the agent once."""
    state = env.reset()
    traj = Trajectory()
    steps = []
    for t in range(env.cfg.poison_points):
        action, logp = agent.act(state.vector)
        out = env.step(action, stream(run_seed, "step", episode, t))
        traj.add(state.vector, action, logp, out.reward)
        info = out.info
        steps.append(StepRecord(
            episode, t, action, out.acc_after, out.reward, info["graph_index"], info["kind"],
            info["feasible"], info["gnp_edges"], info["nodes_added"], info["edges_added"],
        ))
        state = out.next_state
    agent.learn(traj)
    return EpisodeRecord(episode, steps)


class RecordWriter:
    """Appends a run's step rows after every episode so interrupted runs keep their data."""

    def __init__(self, outdir: Path, record: RunRecord):
        self.dir = Path(outdir) / record.policy
        self.dir.mkdir(parents=True, exist_ok=True)
        self.record = record
        self.csv_path = self.dir / f"run_{record.seed}.csv"
        self.json_path = self.dir / f"run_{record.seed}.json"
        with self.csv_path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(RECORD_FIELDS)
        self.flush_manifest()

    def append(self, ep: EpisodeRecord) -> None:
        with self.csv_path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for s in ep.steps:
                w.writerow(s.row())
        self.flush_manifest()

    def flush_manifest(self) -> None:
        tmp = self.json_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.record.manifest(), indent=2, sort_keys=True))
        tmp.replace(self.json_path)


def run_policy(train: Dataset, test: Dataset, model: GnnModel, cfg: AttackConfig, policy: str, run_seed: int,
               outdir: Path | None = None) -> RunRecord:
    """Run ``cfg.n_episodes`` episodes of one policy against a trained victim."""
    record = RunRecord(run_seed, policy, train_labels=[int(x) for x in train.labels],
                       dataset_digest=train.digest())
    writer = RecordWriter(outdir, record) if outdir is not None else None
    agent = None
    try:
        env = PoisonEnv(train, test, model, cfg.train, cfg.env)
        agent = Agent(dataclasses.replace(cfg.agent, kind=policy), env.state_dim, env.n_actions, run_seed)
        env.reset()
        record.baseline_acc = env.baseline_acc
        for ep in range(cfg.n_episodes):
            episode = run_episode(env, agent, run_seed, ep)
            record.episodes.append(episode)
            if writer:
                writer.append(episode)
    except Exception:
        record.error = traceback.format_exc()
        log.error("run %s/%s failed:\n%s", policy, run_seed, record.error)
    if writer:
        writer.flush_manifest()
        if not record.error and agent is not None and agent.policy is not None:
            save_policy(agent.policy, writer.dir / f"policy_{run_seed}", {"seed": run_seed})
    return record


def prepare_run(cfg: AttackConfig, run_seed: int) -> tuple[Dataset, Dataset, GnnModel, list[gnn.EpochMetrics]]:
    """Generate the run's dataset and train its baseline victim."""
    dcfg = dataclasses.replace(cfg.dataset, seed=run_seed)
    train, test = generate(dcfg)
    tcfg = dataclasses.replace(cfg.train, seed=run_seed)
    model = gnn.init_model(tcfg.hidden_dim, seed=run_seed)
    model, history = gnn.train(model, train, tcfg, test)
    return train, test, model, history


def _paired_run(args) -> dict[str, RunRecord]:
    cfg, policies, run_seed, outdir = args
    try:
        train, test, model, history = prepare_run(cfg, run_seed)
    except Exception:
        err = traceback.format_exc()
        return {p: RunRecord(run_seed, p, error=err) for p in policies}
    if outdir is not None:
        write_metrics(Path(outdir) / "baseline" / f"run_{run_seed}.csv", history)
    return {p: run_policy(train, test, model, cfg, p, run_seed, outdir) for p in policies}


def _map_runs(cfg: AttackConfig, policies: Sequence[str], outdir) -> dict[str, list[RunRecord]]:
    jobs = [(cfg, tuple(policies), s, str(outdir) if outdir is not None else None) for s in cfg.run_seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(jobs))) as pool:
            results = list(pool.map(_paired_run, jobs))
    else:
        results = [_paired_run(j) for j in jobs]
    return {p: [r[p] for r in results] for p in policies}


def run_attack(cfg: AttackConfig, outdir: str | Path | None = None) -> list[RunRecord]:
    """All runs of ``cfg.policy``: per seed, fresh dataset, 70-epoch victim, episodes."""
    if outdir is not None:
        _write_config(Path(outdir), cfg, [cfg.policy])
    records = _map_runs(cfg, [cfg.policy], outdir)[cfg.policy]
    if outdir is not None:
        write_summary(Path(outdir) / "summary.csv", {cfg.policy: records}, cfg.window)
    return records


def attack_fixed(train: Dataset, test: Dataset, model: GnnModel, cfg: AttackConfig, policies: Sequence[str],
                 outdir: str | Path | None = None) -> dict[str, list[RunRecord]]:
    """Attack one given dataset/victim; runs differ only in agent and step seeds."""
    if outdir is not None:
        _write_config(Path(outdir), cfg, policies)
    out = {p: [run_policy(train, test, model, cfg, p, s, outdir) for s in cfg.run_seeds] for p in policies}
    if outdir is not None:
        write_summary(Path(outdir) / "summary.csv", out, cfg.window)
    return out


@dataclass
class Comparison:
    records: dict[str, list[RunRecord]]
    curves: dict[str, np.ndarray]  # per-episode mean reward over runs
    windowed: dict[str, np.ndarray]
    summary: dict[str, dict[str, float]]


def episode_curves(records: Sequence[RunRecord]) -> np.ndarray:
    lengths = {len(r.episodes) for r in records}
    if len(lengths) != 1:
        raise ValueError(f"runs have differing episode counts: {sorted(lengths)}")
    return np.mean([r.episode_rewards for r in records], axis=0)


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    c = np.cumsum(np.insert(np.asarray(x, dtype=float), 0, 0.0))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _distribution(x: np.ndarray) -> dict[str, float]:
    return {
        "mean": float(np.mean(x)), "std": float(np.std(x)), "median": float(np.median(x)),
        "q25": float(np.quantile(x, 0.25)), "q75": float(np.quantile(x, 0.75)),
        "min": float(np.min(x)), "max": float(np.max(x)),
    }


def summarize(records: dict[str, list[RunRecord]], window: int = 10) -> Comparison:
    runs = {p: len(r) for p, r in records.items()}
    if len(set(runs.values())) != 1:
        raise ValueError(f"mismatched run counts across policies: {runs}")
    failed = [f"{r.policy}/{r.seed}" for rs in records.values() for r in rs if r.error]
    if failed:
        raise RuntimeError(f"cannot summarise failed runs: {', '.join(failed)}")
    curves = {p: episode_curves(rs) for p, rs in records.items()}
    windowed = {p: moving_average(c, window) for p, c in curves.items()}
    summary = {p: _distribution(np.concatenate([r.episode_rewards for r in rs])) for p, rs in records.items()}
    return Comparison(records, curves, windowed, summary)


def compare_policies(cfg: AttackConfig, outdir: str | Path | None = None) -> Comparison:
    """Both policies per seed on the same dataset and baseline victim."""
    if outdir is not None:
        _write_config(Path(outdir), cfg, POLICIES)
    records = _map_runs(cfg, POLICIES, outdir)
    comp = summarize(records, cfg.window) if not any(r.error for rs in records.values() for r in rs) else None
    if outdir is not None and comp is not None:
        write_summary(Path(outdir) / "summary.csv", records, cfg.window)
    if comp is None:
        failed = [f"{r.policy}/{r.seed}" for rs in records.values() for r in rs if r.error]
        raise RuntimeError(f"runs failed: {', '.join(failed)}")
    return comp


# -- files ----------------------------------------------------------------------

def _write_config(outdir: Path, cfg: AttackConfig, policies) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    doc = {"attack": cfg.to_dict(), "policies": list(policies), "paired_seeds": len(policies) > 1}
    (outdir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def write_metrics(path: Path, history: Sequence[gnn.EpochMetrics]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for m in history:
            w.writerow([m.epoch, repr(m.loss), repr(m.train_acc), "" if m.test_acc is None else repr(m.test_acc)])
    return path


def write_summary(path: Path, records: dict[str, list[RunRecord]], window: int) -> Path:
    ok = {p: [r for r in rs if not r.error] for p, rs in records.items()}
    ok = {p: rs for p, rs in ok.items() if rs}
    curves = {p: episode_curves(rs) for p, rs in ok.items()}
    n = min((len(c) for c in curves.values()), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["episode"]
        for p in curves:
            header += [f"{p}_mean", f"{p}_windowed"]
        w.writerow(header)
        smooth = {p: moving_average(c, window) for p, c in curves.items()}
        for ep in range(n):
            row = [ep]
            for p in curves:
                row += [repr(float(curves[p][ep])), repr(float(smooth[p][ep]))]
            w.writerow(row)
    return path


def read_run(csv_path: str | Path) -> RunRecord:
    """Rebuild a ``RunRecord`` from its CSV and sibling JSON manifest."""
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    rec = RunRecord(meta["seed"], meta["policy"], meta.get("baseline_acc"), meta.get("dataset_digest"),
                    meta.get("train_labels", []), error=meta.get("error"))
    by_ep: dict[int, list[StepRecord]] = {}
    with csv_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            s = StepRecord(
                int(row["episode"]), int(row["step"]), int(row["action"]), float(row["acc_after"]),
                float(row["reward"]), int(row["graph_index"]), row["kind"], bool(int(row["feasible"])),
                int(row["gnp_edges"]) if row["gnp_edges"] else None,
                int(row["nodes_added"]), int(row["edges_added"]),
            )
            by_ep.setdefault(s.episode, []).append(s)
    rec.episodes = [EpisodeRecord(k, by_ep[k]) for k in sorted(by_ep)]
    return rec


def read_records(outdir: str | Path) -> dict[str, list[RunRecord]]:
    outdir = Path(outdir)
    found = {}
    for p in POLICIES:
        files = sorted((outdir / p).glob("run_*.csv"), key=lambda f: int(f.stem.split("_")[1]))
        if files:
            found[p] = [read_run(f) for f in files]
    return found


def total_steps(records: Sequence[RunRecord]) -> int:
    return sum(len(e.steps) for r in records for e in r.episodes)

