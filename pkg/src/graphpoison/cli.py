"""``graphpoison`` command line: gen-data, train, attack, analyze, reproduce.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, dataset, gnn, runner
from .runner import POLICIES, AttackConfig

log = logging.getLogger("graphpoison")

EXPERIMENTS = {
    "small": dataset.SMALL,
    "large": dataset.LARGE,
}
SMOKE = {"n_runs": 1, "n_episodes": 5, "poison_points": 2}


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--min-nodes", type=int)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--epochs", type=int, help="victim training epochs")
    p.add_argument("--episodes", type=int)
    p.add_argument("--poison-points", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--policy", choices=[*POLICIES, "both"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--outdir", type=Path)
    p.add_argument("--extended-actions", action="store_true", default=None)
    p.add_argument("--smoke", action="store_true", help="1 run, 5 episodes, 2 poison points")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphpoison", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a train/test dataset")
    _common(p)

    p = sub.add_parser("train", help="train the victim classifier")
    p.add_argument("--data", type=Path, required=True, help="directory with train.jsonl and test.jsonl")
    _common(p)

    p = sub.add_parser("attack", help="run poisoning episodes against a trained victim")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    _common(p)

    p = sub.add_parser("analyze", help="regression and plots from attack records")
    p.add_argument("records", type=Path)
    p.add_argument("--pooling", choices=["rows", "mean"], default="rows")
    _common(p)

    p = sub.add_parser("reproduce", help="full pipeline with the experiment defaults")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    _common(p)
    return parser


def resolve_config(args, base: AttackConfig | None = None) -> AttackConfig:
    """Defaults, then ``--config`` file, then flags."""
    cfg = base or AttackConfig()
    doc = cfg.to_dict()
    doc.pop("seeds")
    if args.config is not None:
        loaded = json.loads(args.config.read_text())
        loaded = loaded.get("attack", loaded)
        for key, value in loaded.items():
            if isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
    flags = {
        ("seed",): args.seed,
        ("dataset", "train_size"): args.train_size,
        ("dataset", "test_size"): args.test_size,
        ("dataset", "min_nodes"): args.min_nodes,
        ("dataset", "max_nodes"): args.max_nodes,
        ("train", "epochs"): args.epochs,
        ("n_episodes",): args.episodes,
        ("env", "poison_points"): args.poison_points,
        ("n_runs",): args.runs,
        ("jobs",): args.jobs,
        ("env", "extended_actions"): args.extended_actions,
    }
    if args.policy in POLICIES:
        flags[("policy",)] = args.policy
    if args.smoke:
        for path, value in ((("n_runs",), SMOKE["n_runs"]), (("n_episodes",), SMOKE["n_episodes"]),
                            (("env", "poison_points"), SMOKE["poison_points"])):
            if flags.get(path) is None:
                flags[path] = value
    for path, value in flags.items():
        if value is None:
            continue
        target = doc
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
    if args.seed is not None or args.runs is not None or args.smoke:
        doc["seeds"] = None
    return AttackConfig.from_dict(doc)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: Path, command: str, cfg: AttackConfig, started: float, extra: dict | None = None) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in outdir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "tool": "graphpoison",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "seeds": list(cfg.run_seeds),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": {str(p.relative_to(outdir)): _sha256(p) for p in files},
    }
    manifest.update(extra or {})
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# -- stages ---------------------------------------------------------------------

def _gen_one(cfg: AttackConfig, seed: int, outdir: Path) -> Path:
    dcfg = dataclasses.replace(cfg.dataset, seed=seed)
    train, test = dataset.generate(dcfg)
    dataset.save(train, outdir / "train.jsonl", dcfg)
    dataset.save(test, outdir / "test.jsonl", dcfg)
    return outdir


def _load_data(data_dir: Path) -> tuple[dataset.Dataset, dataset.Dataset]:
    return dataset.load(data_dir / "train.jsonl"), dataset.load(data_dir / "test.jsonl")


def _train_one(cfg: AttackConfig, seed: int, data_dir: Path, outdir: Path) -> float:
    train, test = _load_data(data_dir)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    model = gnn.init_model(tcfg.hidden_dim, seed=seed)
    model, history = gnn.train(model, train, tcfg, test)
    gnn.save_model(model, outdir / "checkpoint", {"seed": seed, "epochs": tcfg.epochs})
    runner.write_metrics(outdir / "metrics.csv", history)
    return history[-1].test_acc


def _attack_one(args) -> dict:
    cfg, seed, data_dir, ckpt, outdir, policies = args
    train, test = _load_data(Path(data_dir))
    model = gnn.load_model(Path(ckpt))
    out = {}
    for p in policies:
        rec = runner.run_policy(train, test, model, cfg, p, seed, Path(outdir))
        out[p] = rec
    return out


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _policies(args, cfg) -> list[str]:
    if args.policy == "both" or (args.policy is None and args.command == "reproduce"):
        return list(POLICIES)
    return [cfg.policy]


def _fail_on_errors(records: dict[str, list[runner.RunRecord]]) -> None:
    bad = [f"{r.policy}/run_{r.seed}" for rs in records.values() for r in rs if r.error]
    if bad:
        raise RuntimeError(f"failed runs: {', '.join(bad)} (see run_*.json for tracebacks)")


def cmd_gen_data(args, cfg: AttackConfig) -> int:
    outdir = args.outdir or Path("data")
    started = time.time()
    _gen_one(cfg, cfg.seed, outdir)
    write_manifest(outdir, "gen-data", cfg, started)
    print(f"wrote {cfg.dataset.train_size} train / {cfg.dataset.test_size} test graphs to {outdir}")
    return 0


def cmd_train(args, cfg: AttackConfig) -> int:
    outdir = args.outdir or Path("model")
    started = time.time()
    acc = _train_one(cfg, cfg.seed, args.data, outdir)
    write_manifest(outdir, "train", cfg, started, {"test_accuracy": acc})
    print(f"test accuracy after {cfg.train.epochs} epochs: {acc:.4f}")
    return 0


def cmd_attack(args, cfg: AttackConfig) -> int:
    outdir = args.outdir or Path("records")
    started = time.time()
    policies = _policies(args, cfg)
    runner._write_config(outdir, cfg, policies)
    items = [(cfg, s, str(args.data), str(args.checkpoint), str(outdir), policies) for s in cfg.run_seeds]
    results = _map(_attack_one, items, cfg.jobs)
    records = {p: [r[p] for r in results] for p in policies}
    runner.write_summary(outdir / "summary.csv", records, cfg.window)
    write_manifest(outdir, "attack", cfg, started)
    _fail_on_errors(records)
    _print_comparison(records)
    return 0


def cmd_analyze(args, cfg: AttackConfig) -> int:
    outdir = args.outdir or args.records / "reports"
    records = runner.read_records(args.records)
    if not records:
        raise RuntimeError(f"no run records under {args.records}")
    analysis.emit_reports(records, outdir, pooling=args.pooling, window=cfg.window)
    print((outdir / "notes.txt").read_text(), end="")
    return 0


def _print_comparison(records: dict[str, list[runner.RunRecord]]) -> None:
    for p, rs in records.items():
        rewards = np.concatenate([r.episode_rewards for r in rs])
        tail = np.mean([r.episode_rewards[-min(20, len(r.episodes)):].mean() for r in rs])
        print(f"{p:>9}: mean episode reward {rewards.mean():+.4f}  (final episodes {tail:+.4f})")
    if set(POLICIES) <= set(records):
        wins = sum(
            a.episode_rewards[-20:].mean() >= b.episode_rewards[-20:].mean()
            for a, b in zip(records["reinforce"], records["random"])
        )
        print(f"reinforce >= random in {wins} of {len(records['reinforce'])} paired runs")


def cmd_reproduce(args, cfg: AttackConfig) -> int:
    outdir = args.outdir or Path(f"reproduce-{args.experiment}")
    started = time.time()
    policies = _policies(args, cfg)
    seeds = cfg.run_seeds
    stage = "gen-data"
    try:
        for s in seeds:
            _gen_one(cfg, s, outdir / "data" / f"run_{s}")
        stage = "train"
        accs = _map(_TrainJob(cfg, outdir), list(seeds), cfg.jobs)
        stage = "attack"
        rec_dir = outdir / "records"
        runner._write_config(rec_dir, cfg, policies)
        items = [(cfg, s, str(outdir / "data" / f"run_{s}"), str(outdir / "models" / f"run_{s}" / "checkpoint"),
                  str(rec_dir), policies) for s in seeds]
        results = _map(_attack_one, items, cfg.jobs)
        records = {p: [r[p] for r in results] for p in policies}
        _fail_on_errors(records)
        runner.write_summary(rec_dir / "summary.csv", records, cfg.window)
        stage = "analyze"
        analysis.emit_reports(records, outdir / "reports", window=cfg.window)
    except Exception as exc:
        write_manifest(outdir, f"reproduce {args.experiment}", cfg, started, {"failed_stage": stage})
        raise StageError(stage, exc) from exc
    write_manifest(outdir, f"reproduce {args.experiment}", cfg, started,
                   {"baseline_test_accuracy": dict(zip(map(str, seeds), accs))})
    print("baseline test accuracy: " + ", ".join(f"{a:.3f}" for a in accs))
    _print_comparison(records)
    for line in (outdir / "reports" / "notes.txt").read_text().splitlines():
        if "classes" in line:
            print(line)
    return 0


class _TrainJob:
    def __init__(self, cfg, outdir):
        self.cfg, self.outdir = cfg, Path(outdir)

    def __call__(self, seed):
        return _train_one(self.cfg, seed, self.outdir / "data" / f"run_{seed}", self.outdir / "models" / f"run_{seed}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "analyze": cmd_analyze,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        base = None
        if args.command == "reproduce":
            base = AttackConfig(dataset=EXPERIMENTS[args.experiment])
        cfg = resolve_config(args, base)
    except (ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
        parser.error(f"invalid configuration: {exc}")
    try:
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:
        print(f"graphpoison {args.command}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
