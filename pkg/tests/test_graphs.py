import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphpoison import graphs as gc
from graphpoison.graphs import Graph, GraphClass
from graphpoison.rng import stream


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        Graph(3, [(0, 3)])
    with pytest.raises(ValueError):
        Graph(3, [(1, 1)])
    with pytest.raises(ValueError):
        Graph(3, [(0, 1), (1, 0)])


def test_cycle_four():
    g = gc.generate_class_graph(GraphClass.CYCLE, 4)
    assert g.node_count == 4
    assert g.edge_set() == {(0, 1), (1, 2), (2, 3), (0, 3)}


def test_star_five_degrees():
    g = gc.generate_class_graph(GraphClass.STAR, 5)
    assert sorted(g.degrees.tolist()) == [1, 1, 1, 1, 4]


def test_clique_five_edges():
    assert gc.generate_class_graph(GraphClass.CLIQUE, 5).edge_count == 10


@pytest.mark.parametrize("cls", list(GraphClass))
@pytest.mark.parametrize("n", [6, 15, 35])
def test_every_class_valid(cls, n):
    g = gc.generate_class_graph(cls, n)
    assert g.label == int(cls)
    assert 1 <= g.node_count <= n
    assert np.all(g.edges < g.node_count)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])


def test_class_shapes():
    assert gc.generate_class_graph(GraphClass.HYPERCUBE, 20).node_count == 16
    assert gc.generate_class_graph(GraphClass.HYPERCUBE, 20).edge_count == 32
    grid = gc.generate_class_graph(GraphClass.GRID, 20)
    assert (grid.node_count, grid.edge_count) == (20, 4 * 4 + 3 * 5)
    ladder = gc.generate_class_graph(GraphClass.CIRCULAR_LADDER, 15)
    assert ladder.node_count == 14 and set(ladder.degrees.tolist()) == {3}
    wheel = gc.generate_class_graph(GraphClass.WHEEL, 8)
    assert wheel.degrees.max() == 7 and wheel.edge_count == 14


def test_below_minimum_is_rejected():
    with pytest.raises(gc.InfeasibleGraphError):
        gc.generate_class_graph(GraphClass.CIRCULAR_LADDER, 5)


def test_gnp_matches_pairwise_replay():
    g = gc.generate_gnp(10, 0.75, stream(7, "gnp"))
    # oracle: one scalar draw per pair in lexicographic order
    rng = stream(7, "gnp")
    expected = set()
    for i in range(10):
        for j in range(i + 1, 10):
            if rng.random() < 0.75:
                expected.add((i, j))
    assert g.edge_set() == expected


def test_gnp_extremes():
    assert gc.generate_gnp(5, 0.0, stream(0)).edge_count == 0
    assert gc.generate_gnp(5, 1.0, stream(0)).edge_count == 10
    with pytest.raises(ValueError):
        gc.generate_gnp(5, 1.5, stream(0))


def test_insert_subgraph_counts():
    host = Graph(20, [(i, (i + 1) % 20) for i in range(20)] + [(0, k) for k in range(2, 7)])
    sub = Graph(10, np.array(sorted(gc.generate_class_graph(GraphClass.CLIQUE, 10).edge_set()))[:33])
    assert (host.edge_count, sub.edge_count) == (25, 33)
    out = gc.insert_subgraph(host, sub, stream(1))
    assert (out.node_count, out.edge_count) == (30, 59)
    # host ids untouched
    assert host.edge_set() <= out.edge_set()


def test_insert_k1_into_k1():
    out = gc.insert_subgraph(Graph(1, []), Graph(1, []), stream(0))
    assert out.node_count == 2 and out.edge_set() == {(0, 1)}


def test_insert_deterministic():
    host = gc.generate_class_graph(GraphClass.STAR, 12)
    sub = gc.generate_gnp(10, 0.5, stream(9))
    assert gc.insert_subgraph(host, sub, stream(4)) == gc.insert_subgraph(host, sub, stream(4))


def test_edits():
    tri = gc.generate_class_graph(GraphClass.CLIQUE, 3)
    out, ok = gc.edge_delete(tri, stream(0))
    assert ok and (out.node_count, out.edge_count) == (3, 2)

    star = gc.generate_class_graph(GraphClass.STAR, 5)
    # find a seed whose deletion picks the centre
    for s in range(100):
        rng = stream(s)
        if int(stream(s).integers(5)) == 0:
            out, ok = gc.node_delete(star, rng)
            break
    assert ok and (out.node_count, out.edge_count) == (4, 0)

    k5 = gc.generate_class_graph(GraphClass.CLIQUE, 5)
    out, ok = gc.edge_add(k5, stream(0))
    assert not ok and out == k5

    out, ok = gc.node_add(tri)
    assert ok and out.node_count == 4 and out.edge_count == 3


def test_in_degrees():
    assert gc.in_degrees(gc.generate_class_graph(GraphClass.CYCLE, 4)).tolist() == [2, 2, 2, 2]
    assert gc.in_degrees(gc.generate_class_graph(GraphClass.STAR, 5)).tolist() == [4, 1, 1, 1, 1]
    assert gc.in_degrees(Graph(3, [])).tolist() == [0, 0, 0]


@pytest.mark.parametrize("cls, n, expected", [
    (GraphClass.CYCLE, 6, (6, 6, 2.0, 2, 2)),
    (GraphClass.STAR, 5, (5, 4, 1.6, 4, 1)),
    (GraphClass.CLIQUE, 4, (4, 6, 3.0, 3, 3)),
])
def test_summary_stats(cls, n, expected):
    s = gc.summary_stats(gc.generate_class_graph(cls, n))
    assert tuple(s.as_vector().tolist()) == pytest.approx(expected)


def test_record_round_trip():
    g = gc.generate_class_graph(GraphClass.WHEEL, 9)
    assert Graph.from_record(g.to_record()) == g


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), p=st.floats(0, 1), seed=st.integers(0, 2**16))
def test_gnp_invariants(n, p, seed):
    g = gc.generate_gnp(n, p, stream(seed))
    assert g.node_count == n
    assert g.edge_count <= n * (n - 1) // 2
    assert len(g.edge_set()) == g.edge_count
