import numpy as np
import pytest

from graphpoison import dataset
from graphpoison.dataset import Dataset, DatasetConfig


def test_sizes():
    train, test = dataset.generate(DatasetConfig(150, 30, 15, 35, seed=4))
    assert (len(train), len(test)) == (150, 30)
    assert train.role == "train" and test.role == "test"
    assert all(0 <= g.label < 8 for g in train)


def test_large_variant_sizes():
    train, _ = dataset.generate(DatasetConfig(6, 2, 1500, 2000, seed=0))
    assert all(1024 <= g.node_count <= 2000 for g in train)


def test_class_frequencies_uniform():
    train, _ = dataset.generate(DatasetConfig(8000, 1, 6, 8, seed=11))
    counts = np.bincount(train.labels, minlength=8)
    sigma = np.sqrt(8000 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - 1000) <= 3 * sigma)


def test_deterministic_and_seed_sensitive():
    a = dataset.generate(DatasetConfig(20, 5, seed=1))
    b = dataset.generate(DatasetConfig(20, 5, seed=1))
    c = dataset.generate(DatasetConfig(20, 5, seed=2))
    assert a == b
    assert a[0].digest() != c[0].digest()


def test_test_size_does_not_move_train():
    a, _ = dataset.generate(DatasetConfig(20, 5, seed=1))
    b, _ = dataset.generate(DatasetConfig(20, 9, seed=1))
    assert a == b


@pytest.mark.parametrize("cfg", [
    DatasetConfig(0, 5), DatasetConfig(5, 0), DatasetConfig(5, 5, 3, 10), DatasetConfig(5, 5, 20, 10),
])
def test_rejects_infeasible(cfg):
    with pytest.raises(ValueError):
        dataset.generate(cfg)


def test_round_trip(tmp_path):
    cfg = DatasetConfig(30, 5, seed=3)
    train, _ = dataset.generate(cfg)
    path = dataset.save(train, tmp_path / "train.jsonl", cfg)
    assert dataset.load(path) == train
    assert dataset.load_config(path) == cfg


def test_empty_round_trip(tmp_path):
    empty = Dataset((), "test")
    assert dataset.load(dataset.save(empty, tmp_path / "e.jsonl")) == empty


def test_truncated_file(tmp_path):
    train, _ = dataset.generate(DatasetConfig(10, 2, seed=0))
    path = dataset.save(train, tmp_path / "t.jsonl")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:6]) + "\n" + lines[6][: len(lines[6]) // 2])
    with pytest.raises(dataset.DatasetFormatError) as err:
        dataset.load(path)
    assert err.value.lineno >= 7


def test_missing_records(tmp_path):
    train, _ = dataset.generate(DatasetConfig(10, 2, seed=0))
    path = dataset.save(train, tmp_path / "t.jsonl")
    path.write_text("\n".join(path.read_text().splitlines()[:5]) + "\n")
    with pytest.raises(dataset.DatasetFormatError):
        dataset.load(path)


def test_bad_record(tmp_path):
    train, _ = dataset.generate(DatasetConfig(3, 2, seed=0))
    path = dataset.save(train, tmp_path / "t.jsonl")
    lines = path.read_text().splitlines()
    lines[2] = '{"n": 3, "edges": [[0, 5]], "label": 1}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(dataset.DatasetFormatError) as err:
        dataset.load(path)
    assert err.value.lineno == 3
