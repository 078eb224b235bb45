import numpy as np
import pytest

from graphpoison import gnn
from graphpoison.dataset import DatasetConfig, generate
from graphpoison.graphs import Graph, GraphClass, generate_class_graph, generate_gnp
from graphpoison.nn import AdamConfig, finite_diff_check
from graphpoison.rng import stream


def _batch():
    return [
        generate_class_graph(GraphClass.WHEEL, 7),
        generate_class_graph(GraphClass.LOLLIPOP, 9),
        generate_gnp(8, 0.4, stream(2)).with_label(5),
    ]


def test_propagation_small_cases():
    assert gnn.propagation_matrix(Graph(1, [])).tolist() == [[1.0]]
    assert np.allclose(gnn.propagation_matrix(Graph(2, [(0, 1)])), 0.5)
    p = gnn.propagation_matrix(generate_class_graph(GraphClass.CYCLE, 4))
    assert np.allclose(p.sum(axis=1), 1.0)


def test_sparse_and_dense_agree():
    g = generate_gnp(30, 0.1, stream(5))
    assert np.allclose(gnn._sparse_propagation(g).toarray(), gnn.propagation_matrix(g))


def test_forward_is_distribution():
    model = gnn.init_model(16, seed=1)
    for g in _batch():
        out = gnn.forward(model, g)
        assert out.shape == (8,)
        assert abs(out.sum() - 1.0) < 1e-12


def test_zero_model_uniform():
    out = gnn.forward(gnn.zero_model(16), _batch()[0])
    assert np.allclose(out, 1 / 8)


def test_permutation_invariance():
    model = gnn.init_model(16, seed=3)
    g = generate_gnp(12, 0.3, stream(8))
    perm = stream(1).permutation(12)
    h = Graph(12, perm[g.edges], g.label)
    assert np.max(np.abs(gnn.forward(model, g) - gnn.forward(model, h))) < 1e-10


def test_gradients_match_finite_differences():
    model = gnn.init_model(6, seed=4)
    rng = np.random.default_rng(0)
    for p in model.params.values():
        p.value[:] = rng.normal(scale=0.5, size=p.shape)
    batch = _batch()

    def f():
        loss = gnn.loss_and_grads(model, batch)
        return loss, {k: p.grad.copy() for k, p in model.params.items()}

    assert finite_diff_check(f, {k: p.value for k, p in model.params.items()}) < 1e-4


def test_training_reduces_loss_and_is_deterministic():
    train, test = generate(DatasetConfig(40, 10, 15, 20, seed=1))
    cfg = gnn.TrainConfig(epochs=8, hidden_dim=16)
    a, hist = gnn.train(gnn.init_model(16, seed=0), train, cfg, test)
    b, _ = gnn.train(gnn.init_model(16, seed=0), train, cfg, test)
    assert hist[-1].loss < hist[0].loss
    assert len(hist) == 9
    for k in a.params:
        assert np.array_equal(a.params[k].value, b.params[k].value)


def test_single_graph_overfits():
    g = [generate_class_graph(GraphClass.GRID, 16)]
    model, hist = gnn.train(gnn.init_model(16, seed=0), g, gnn.TrainConfig(epochs=200, hidden_dim=16))
    assert hist[-1].train_acc == 1.0


def test_evaluate_cases():
    graphs = [generate_class_graph(c, 12) for c in GraphClass]
    assert gnn.evaluate(gnn.zero_model(8), graphs) == pytest.approx(1 / 8)
    # hypercube(8) and ladder(12) are both 3-regular, indistinguishable from degrees
    graphs = graphs[:-1]
    model, _ = gnn.train(gnn.init_model(16, seed=0), graphs, gnn.TrainConfig(epochs=150, hidden_dim=16))
    assert gnn.evaluate(model, graphs) == 1.0
    assert gnn.evaluate(model, graphs) == gnn.evaluate(model, graphs)
    with pytest.raises(ValueError):
        gnn.evaluate(model, [])


def test_retrain_zero_lr_keeps_accuracy():
    train, test = generate(DatasetConfig(24, 8, 15, 20, seed=2))
    cfg = gnn.TrainConfig(epochs=3, hidden_dim=8)
    model, _ = gnn.train(gnn.init_model(8), train, cfg)
    before = {k: p.value.copy() for k, p in model.params.items()}
    acc = gnn.evaluate(model, test)
    frozen = gnn.TrainConfig(epochs=1, hidden_dim=8, optimizer=AdamConfig(lr=0.0))
    gnn.retrain_one_epoch(model, train, frozen, stream(0))
    assert gnn.evaluate(model, test) == acc
    assert all(np.array_equal(before[k], model.params[k].value) for k in before)
    gnn.retrain_one_epoch(model, train, cfg, stream(0))
    assert any(not np.array_equal(before[k], model.params[k].value) for k in before)


def test_clone_independent():
    model = gnn.init_model(8, seed=1)
    clone = gnn.clone_model(model)
    g = _batch()[0]
    assert np.array_equal(gnn.forward(clone, g), gnn.forward(model, g))
    assert np.array_equal(gnn.forward(gnn.clone_model(clone), g), gnn.forward(model, g))
    clone.params["head"].value += 1.0
    assert not np.array_equal(clone.params["head"].value, model.params["head"].value)


def test_save_load(tmp_path):
    model = gnn.init_model(8, seed=1)
    model.step = 5
    gnn.save_model(model, tmp_path / "m")
    back = gnn.load_model(tmp_path / "m")
    assert back.step == 5
    g = _batch()[1]
    assert np.array_equal(gnn.forward(back, g), gnn.forward(model, g))
