"""Synthetic eight-class graph dataset: generation and newline-delimited JSON storage."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .graphs import NUM_CLASSES, SMALLEST_FEASIBLE, Graph, generate_class_graph
from .rng import stream

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    train_size: int = 180
    test_size: int = 30
    min_nodes: int = 15
    max_nodes: int = 35
    seed: int = 0

    def validate(self) -> "DatasetConfig":
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError("train_size and test_size must be >= 1")
        if self.min_nodes < SMALLEST_FEASIBLE:
            raise ValueError(
                f"min_nodes={self.min_nodes} is below {SMALLEST_FEASIBLE}, the size every class can realise"
            )
        if self.max_nodes < self.min_nodes:
            raise ValueError("max_nodes must be >= min_nodes")
        return self


SMALL = DatasetConfig()
LARGE = DatasetConfig(min_nodes=1500, max_nodes=2000)


@dataclass(frozen=True, eq=False)
class Dataset(Sequence):
    """An ordered, immutable collection of labelled graphs."""

    graphs: tuple[Graph, ...]
    role: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for i, g in enumerate(self.graphs):
            if g.label is None:
                raise ValueError(f"graph {i} has no label")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    def __iter__(self) -> Iterator[Graph]:
        return iter(self.graphs)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.role == other.role and self.graphs == other.graphs

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def replace(self, index: int, graph: Graph) -> "Dataset":
        graphs = list(self.graphs)
        graphs[index] = graph
        return Dataset(tuple(graphs), self.role)

    def digest(self) -> str:
        h = hashlib.sha256()
        for g in self.graphs:
            h.update(np.array([g.node_count, g.label], dtype="<i8").tobytes())
            h.update(g.edges.astype("<i8").tobytes())
        return h.hexdigest()


def _sample(n_graphs: int, cfg: DatasetConfig, rng: np.random.Generator, role: str) -> Dataset:
    graphs = []
    for _ in range(n_graphs):
        label = int(rng.integers(NUM_CLASSES))
        n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
        graphs.append(generate_class_graph(label, n))
    return Dataset(tuple(graphs), role)


def generate(cfg: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Draw train and test splits; class and size are uniform per graph.

    The two splits use independent streams, so changing ``test_size`` leaves the
    training graphs untouched.
    """
    cfg.validate()
    train = _sample(cfg.train_size, cfg, stream(cfg.seed, "dataset", "train"), "train")
    test = _sample(cfg.test_size, cfg, stream(cfg.seed, "dataset", "test"), "test")
    return train, test


# -- persistence ----------------------------------------------------------------

class DatasetFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


def save(dataset: Dataset, path: str | Path, config: DatasetConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "graphpoison-dataset",
        "version": FORMAT_VERSION,
        "role": dataset.role,
        "count": len(dataset),
        "config": asdict(config) if config is not None else None,
    }
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for g in dataset:
            fh.write(json.dumps(g.to_record(), separators=(",", ":")) + "\n")
    tmp.replace(path)
    return path


def load(path: str | Path) -> Dataset:
    """Read a dataset file; any malformed or missing record raises ``DatasetFormatError``."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(path, 1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, 1, f"bad header: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("format") != "graphpoison-dataset":
        raise DatasetFormatError(path, 1, "not a graphpoison dataset header")
    graphs = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            graphs.append(Graph.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, lineno, f"bad graph record: {exc}") from None
        if graphs[-1].label is None:
            raise DatasetFormatError(path, lineno, "graph record has no label")
    if len(graphs) != header.get("count"):
        raise DatasetFormatError(
            path, len(lines) + 1, f"expected {header.get('count')} graphs, found {len(graphs)} (truncated?)"
        )
    return Dataset(tuple(graphs), header.get("role", "train"))


def load_config(path: str | Path) -> DatasetConfig | None:
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
    cfg = header.get("config")
    return DatasetConfig(**cfg) if cfg else None
