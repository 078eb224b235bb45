import json

import pytest

from graphpoison import cli

SMALL = ["--train-size", "12", "--test-size", "6", "--min-nodes", "15", "--max-nodes", "18", "--epochs", "3"]


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["reproduce", "small", "--bogus"])
    assert err.value.code == 2


def test_bad_config_is_usage_error(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text('{"n_runs": 0}')
    with pytest.raises(SystemExit) as err:
        cli.main(["gen-data", "--config", str(bad)])
    assert err.value.code == 2


def test_runtime_failure_exit_code(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "--outdir", str(tmp_path / "m")]) == 1
    assert "train" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n_episodes": 7, "dataset": {"train_size": 50, "test_size": 9}}))
    args = cli.build_parser().parse_args(["gen-data", "--config", str(conf), "--train-size", "20"])
    cfg = cli.resolve_config(args)
    assert (cfg.n_episodes, cfg.dataset.train_size, cfg.dataset.test_size) == (7, 20, 9)


def test_smoke_knob():
    args = cli.build_parser().parse_args(["reproduce", "small", "--smoke"])
    cfg = cli.resolve_config(args, cli.AttackConfig(dataset=cli.EXPERIMENTS["small"]))
    assert (cfg.n_runs, cfg.n_episodes, cfg.env.poison_points) == (1, 5, 2)


def test_stage_by_stage(tmp_path, capsys):
    data, model, recs, reps = (tmp_path / d for d in ("data", "model", "records", "reports"))
    assert cli.main(["gen-data", "--outdir", str(data), *SMALL]) == 0
    assert cli.main(["train", "--data", str(data), "--outdir", str(model), *SMALL]) == 0
    assert cli.main(["attack", "--data", str(data), "--checkpoint", str(model / "checkpoint"), "--policy", "both",
                     "--episodes", "3", "--poison-points", "2", "--runs", "1", "--outdir", str(recs), *SMALL]) == 0
    assert cli.main(["analyze", str(recs), "--outdir", str(reps)]) == 0
    for d in (data, model, recs):
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["config"]["dataset"]["train_size"] == 12
        assert manifest["outputs"]
    assert (reps / "reinforce" / "class_sums.csv").exists()
    assert "reinforce >= random" in capsys.readouterr().out


def test_reproduce_smoke_layout(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["reproduce", "small", "--smoke", "--outdir", str(out), *SMALL]) == 0
    for rel in ("data/run_0/train.jsonl", "models/run_0/metrics.csv", "models/run_0/checkpoint/manifest.json",
                "records/reinforce/run_0.csv", "records/random/run_0.csv", "reports/summary.csv", "manifest.json"):
        assert (out / rel).exists(), rel
    assert "reinforce" in capsys.readouterr().out
