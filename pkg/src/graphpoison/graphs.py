"""Undirected simple graphs, the eight synthetic classes, random graphs and edits."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

NUM_CLASSES = 8


class GraphClass(enum.IntEnum):
    CYCLE = 0
    STAR = 1
    WHEEL = 2
    LOLLIPOP = 3
    HYPERCUBE = 4
    GRID = 5
    CLIQUE = 6
    CIRCULAR_LADDER = 7

    @property
    def pretty(self) -> str:
        return self.name.lower().replace("_", " ")


# smallest node count each generator accepts
MIN_NODES = {
    GraphClass.CYCLE: 3,
    GraphClass.STAR: 2,
    GraphClass.WHEEL: 4,
    GraphClass.LOLLIPOP: 4,
    GraphClass.HYPERCUBE: 2,
    GraphClass.GRID: 4,
    GraphClass.CLIQUE: 2,
    GraphClass.CIRCULAR_LADDER: 6,
}
SMALLEST_FEASIBLE = max(MIN_NODES.values())


class InfeasibleGraphError(ValueError):
    """Requested graph cannot be built with the given parameters."""


def _canonical_edges(n: int, edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"edge endpoint out of range for a graph with {n} nodes")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    if np.any(lo == hi):
        raise ValueError("self-loops are not allowed")
    keys = lo * n + hi
    uniq = np.unique(keys)
    if uniq.size != keys.size:
        raise ValueError("duplicate edges are not allowed")
    return np.stack([uniq // n, uniq % n], axis=1)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    ``edges`` is stored canonically: an ``(E, 2)`` int array with ``i < j`` per row,
    rows sorted lexicographically. The array is read-only.
    """

    node_count: int
    edges: np.ndarray = field(repr=False)
    label: int | None = None

    def __post_init__(self):
        if self.node_count < 0:
            raise ValueError("node_count must be non-negative")
        if self.label is not None and not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label {self.label} outside [0, {NUM_CLASSES})")
        edges = _canonical_edges(self.node_count, self.edges)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def with_label(self, label: int | None) -> "Graph":
        return Graph(self.node_count, self.edges, label)

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges.ravel(), minlength=self.node_count).astype(np.float64)
        deg.setflags(write=False)
        return deg

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.label == other.label
            and np.array_equal(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((self.node_count, self.label, self.edges.tobytes()))

    def to_record(self) -> dict:
        return {"n": self.node_count, "edges": self.edges.tolist(), "label": self.label}

    @classmethod
    def from_record(cls, rec: dict) -> "Graph":
        return cls(int(rec["n"]), rec["edges"], rec.get("label"))


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    mean_degree: float
    max_degree: float
    min_degree: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.num_nodes, self.num_edges, self.mean_degree, self.max_degree, self.min_degree],
            dtype=np.float64,
        )


STATS_WIDTH = 5


# -- generators ---------------------------------------------------------------

def _cycle_edges(nodes: np.ndarray) -> np.ndarray:
    return np.stack([nodes, np.roll(nodes, -1)], axis=1)


def _clique_edges(n: int, offset: int = 0) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1) + offset


def cycle(n: int) -> np.ndarray:
    return _cycle_edges(np.arange(n))


def star(n: int) -> np.ndarray:
    leaves = np.arange(1, n)
    return np.stack([np.zeros_like(leaves), leaves], axis=1)


def wheel(n: int) -> np.ndarray:
    return np.concatenate([star(n), _cycle_edges(np.arange(1, n))])


def lollipop(n: int) -> tuple[int, np.ndarray]:
    head = max(3, n // 2)
    tail = np.arange(head - 1, n)
    path = np.stack([tail[:-1], tail[1:]], axis=1)
    return n, np.concatenate([_clique_edges(head), path])


def hypercube(n: int) -> tuple[int, np.ndarray]:
    dim = int(math.floor(math.log2(n)))
    size = 1 << dim
    nodes = np.arange(size)
    parts = []
    for b in range(dim):
        nbr = nodes ^ (1 << b)
        keep = nodes < nbr
        parts.append(np.stack([nodes[keep], nbr[keep]], axis=1))
    return size, np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)


def grid(n: int) -> tuple[int, np.ndarray]:
    rows = math.isqrt(n)
    cols = n // rows
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return rows * cols, np.concatenate([horiz, vert])


def circular_ladder(n: int) -> tuple[int, np.ndarray]:
    k = n // 2
    outer = np.arange(k)
    inner = outer + k
    rungs = np.stack([outer, inner], axis=1)
    return 2 * k, np.concatenate([_cycle_edges(outer), _cycle_edges(inner), rungs])


def generate_class_graph(graph_class: GraphClass | int, n_nodes: int, rng: np.random.Generator | None = None) -> Graph:
    """Build the canonical member of ``graph_class`` with about ``n_nodes`` nodes.

    Hypercubes round down to a power of two, grids to ``isqrt(n) x (n // isqrt(n))``
    and circular ladders to an even count. The class shapes are deterministic, so
    ``rng`` is accepted for interface symmetry and left untouched.

    Raises:
        InfeasibleGraphError: ``n_nodes`` is below the class minimum.
    """
    cls = GraphClass(graph_class)
    if n_nodes < MIN_NODES[cls]:
        raise InfeasibleGraphError(f"{cls.pretty} needs at least {MIN_NODES[cls]} nodes, got {n_nodes}")
    if cls is GraphClass.CYCLE:
        size, edges = n_nodes, cycle(n_nodes)
    elif cls is GraphClass.STAR:
        size, edges = n_nodes, star(n_nodes)
    elif cls is GraphClass.WHEEL:
        size, edges = n_nodes, wheel(n_nodes)
    elif cls is GraphClass.LOLLIPOP:
        size, edges = lollipop(n_nodes)
    elif cls is GraphClass.HYPERCUBE:
        size, edges = hypercube(n_nodes)
    elif cls is GraphClass.GRID:
        size, edges = grid(n_nodes)
    elif cls is GraphClass.CLIQUE:
        size, edges = n_nodes, _clique_edges(n_nodes)
    else:
        size, edges = circular_ladder(n_nodes)
    return Graph(size, edges, int(cls))


def generate_gnp(n: int, p_edge: float, rng: np.random.Generator) -> Graph:
    """G(n, p): each of the n(n-1)/2 pairs, in lexicographic order, gets one uniform draw."""
    if n < 1:
        raise ValueError("gnp graph needs n >= 1")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p_edge}")
    i, j = np.triu_indices(n, k=1)
    keep = rng.random(i.size) < p_edge
    return Graph(n, np.stack([i[keep], j[keep]], axis=1))


# -- perturbations ------------------------------------------------------------

def insert_subgraph(host: Graph, sub: Graph, rng: np.random.Generator) -> Graph:
    """Disjoint union of ``host`` and ``sub`` joined by one uniformly random bridge edge.

    Sub-graph nodes are appended after the host's, so host node ids are unchanged.
    """
    offset = host.node_count
    a = int(rng.integers(host.node_count))
    b = offset + int(rng.integers(sub.node_count))
    edges = np.concatenate([host.edges, sub.edges + offset, np.array([[a, b]], dtype=np.int64)])
    return Graph(host.node_count + sub.node_count, edges, host.label)


def node_add(g: Graph) -> tuple[Graph, bool]:
    return Graph(g.node_count + 1, g.edges, g.label), True


def node_delete(g: Graph, rng: np.random.Generator) -> tuple[Graph, bool]:
    if g.node_count < 2:
        return g, False
    v = int(rng.integers(g.node_count))
    keep = np.all(g.edges != v, axis=1)
    edges = g.edges[keep]
    edges = edges - (edges > v)
    return Graph(g.node_count - 1, edges, g.label), True


def edge_add(g: Graph, rng: np.random.Generator) -> tuple[Graph, bool]:
    n = g.node_count
    i, j = np.triu_indices(n, k=1)
    present = np.zeros(i.size, dtype=bool)
    if g.edge_count:
        # rank of pair (a, b), a < b, in triu order
        a, b = g.edges[:, 0], g.edges[:, 1]
        present[a * n - a * (a + 1) // 2 + (b - a - 1)] = True
    missing = np.flatnonzero(~present)
    if missing.size == 0:
        return g, False
    k = missing[int(rng.integers(missing.size))]
    edges = np.concatenate([g.edges, [[i[k], j[k]]]])
    return Graph(n, edges, g.label), True


def edge_delete(g: Graph, rng: np.random.Generator) -> tuple[Graph, bool]:
    if g.edge_count == 0:
        return g, False
    k = int(rng.integers(g.edge_count))
    return Graph(g.node_count, np.delete(g.edges, k, axis=0), g.label), True


# -- features -----------------------------------------------------------------

def in_degrees(g: Graph) -> np.ndarray:
    """Per-node degree; every undirected edge counts once towards each endpoint."""
    return np.array(g.degrees)


def summary_stats(g: Graph) -> GraphStats:
    deg = g.degrees
    if g.node_count == 0:
        return GraphStats(0, 0, 0.0, 0.0, 0.0)
    return GraphStats(
        num_nodes=g.node_count,
        num_edges=g.edge_count,
        mean_degree=float(deg.mean()),
        max_degree=float(deg.max()),
        min_degree=float(deg.min()),
    )


def stats_matrix(graphs: Iterable[Graph]) -> np.ndarray:
    """``(len(graphs), 5)`` array of summary statistics, one row per graph."""
    rows = [summary_stats(g).as_vector() for g in graphs]
    return np.array(rows, dtype=np.float64).reshape(-1, STATS_WIDTH)
