"""Post-hoc analysis of attack records.

Least squares from per-episode action counts to episode reward, coefficient sums per
graph class, reward density estimates, and the CSV/SVG reports built from them.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .graphs import GraphClass
from .runner import RunRecord, episode_curves, moving_average


@dataclass
class RegressionResult:
    coefficients: np.ndarray
    intercept: float
    r_squared: float
    rank: int
    constant_target: bool = False
    # rank reaches rows - 1: the centred design interpolates any target, so r2 is 1 by construction
    saturated: bool = False

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.coefficients + self.intercept


def _min_norm_lstsq(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    """Minimum-norm least squares via a complete orthogonal decomposition.

    Column-pivoted QR ``A P = Q R`` reveals the rank ``r``; the leading ``r`` rows of
    ``R`` are then factored again (``R[:r].T = Z L``) so that the solution lies in
    the row space of ``A``.
    """
    m, n = a.shape
    q, r, piv = sla.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros(n), 0
    tol = max(m, n) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    c = q[:, :rank].T @ b
    top = r[:rank, :]
    z, lower = np.linalg.qr(top.T)  # top.T = z @ lower, lower upper-triangular (rank x rank)
    u = sla.solve_triangular(lower, c, trans="T")
    x_perm = z @ u
    x = np.zeros(n)
    x[piv] = x_perm
    return x, rank


def ols_fit(features, target) -> RegressionResult:
    """Ordinary least squares with intercept.

    Columns that are constant (for instance graphs never chosen) get coefficient 0,
    and remaining collinearity is resolved by the minimum-norm solution. A constant
    target yields all-zero coefficients and ``r_squared = 0`` with
    ``constant_target`` set.

    Raises:
        ValueError: fewer than two rows, or mismatched shapes.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows for {y.shape[0]} targets")
    if x.shape[0] < 2:
        raise ValueError("ols_fit needs at least two rows")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    ss_tot = float(yc @ yc)
    coef = np.zeros(x.shape[1])
    if ss_tot <= np.finfo(float).tiny:
        return RegressionResult(coef, float(y_mean), 0.0, 0, constant_target=True)
    live = np.flatnonzero(np.any(xc != 0.0, axis=0))
    rank = 0
    if live.size:
        coef[live], rank = _min_norm_lstsq(xc[:, live], yc)
    resid = yc - xc @ coef
    r2 = 1.0 - float(resid @ resid) / ss_tot
    r2 = min(max(r2, 0.0), 1.0)
    return RegressionResult(coef, float(y_mean - x_mean @ coef), r2, rank, saturated=rank >= x.shape[0] - 1)


def action_count_matrix(record: RunRecord, n_graphs: int | None = None) -> np.ndarray:
    """Episodes x graphs matrix of how often each training graph was perturbed."""
    n = n_graphs if n_graphs is not None else len(record.train_labels)
    out = np.zeros((len(record.episodes), n))
    for i, ep in enumerate(record.episodes):
        for s in ep.steps:
            out[i, s.graph_index] += 1
    return out


@dataclass
class GroupFit:
    digest: str | None
    labels: list[int]
    runs: list[int]
    result: RegressionResult


def fit_records(records: Sequence[RunRecord], pooling: str = "rows") -> list[GroupFit]:
    """Regress episode reward on action counts, pooling runs that share a training set.

    ``pooling="rows"`` stacks one row per (run, episode); ``"mean"`` averages counts
    and rewards over runs at each episode index first. Runs on different datasets are
    never pooled because graph ids would refer to different graphs.
    """
    if pooling not in ("rows", "mean"):
        raise ValueError(f"unknown pooling {pooling!r}")
    groups: dict[str | None, list[RunRecord]] = defaultdict(list)
    for r in records:
        if r.error or not r.episodes:
            continue
        groups[r.dataset_digest].append(r)
    fits = []
    for digest, runs in groups.items():
        n = len(runs[0].train_labels)
        mats = [action_count_matrix(r, n) for r in runs]
        rewards = [r.episode_rewards for r in runs]
        if pooling == "rows":
            x, y = np.concatenate(mats), np.concatenate(rewards)
        else:
            k = min(len(m) for m in mats)
            x = np.mean([m[:k] for m in mats], axis=0)
            y = np.mean([r[:k] for r in rewards], axis=0)
        fits.append(GroupFit(digest, list(runs[0].train_labels), [r.seed for r in runs], ols_fit(x, y)))
    return fits


def group_by_class(result: RegressionResult, labels: Sequence[int]) -> dict[GraphClass, float]:
    """Sum of coefficients per graph class; every class appears, absent ones with 0."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != result.coefficients.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {result.coefficients.shape[0]} coefficients")
    return {c: float(result.coefficients[labels == int(c)].sum()) for c in GraphClass}


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    iqr = np.subtract(*np.quantile(x, [0.75, 0.25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * x.size ** (-0.2)
    return h if h > 0 else 1e-3


def kde(samples, grid=None, points: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian kernel density with Silverman's bandwidth, renormalised on its grid.

    The default grid spans the samples plus five bandwidths either side; the density
    is divided by its trapezoid integral so it has unit area on that grid.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("kde needs at least one sample")
    h = silverman_bandwidth(x)
    if grid is None:
        grid = np.linspace(x.min() - 5 * h, x.max() + 5 * h, points)
    grid = np.asarray(grid, dtype=float)
    z = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return grid, dens / np.trapezoid(dens, grid)


# -- reports --------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _plots():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "graphpoison"
    return plt


@dataclass
class Report:
    files: dict[str, str] = field(default_factory=dict)  # relative path -> text
    notes: list[str] = field(default_factory=list)

    def write(self, outdir: Path) -> list[Path]:
        written = []
        for rel, text in self.files.items():
            path = outdir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
            written.append(path)
        return written


def build_report(records: Mapping[str, Sequence[RunRecord]], pooling: str = "rows", window: int = 10) -> Report:
    """Assemble every report file in memory; nothing touches disk here."""
    records = {p: [r for r in rs if not r.error and r.episodes] for p, rs in records.items()}
    records = {p: rs for p, rs in records.items() if rs}
    if not records:
        raise ValueError("no completed episodes to analyse")
    plt = _plots()
    rep = Report()

    curves = {p: episode_curves(rs) for p, rs in records.items()}
    smooth = {p: moving_average(c, window) for p, c in curves.items()}
    n = min(len(c) for c in curves.values())
    header = ["episode"] + [f"{p}_{k}" for p in curves for k in ("mean", "windowed")]
    rows = [[e] + [repr(float(v[e])) for p in curves for v in (curves[p], smooth[p])] for e in range(n)]
    rep.files["summary.csv"] = _csv_text(header, rows)

    fig, ax = plt.subplots(figsize=(7, 4))
    for p in curves:
        line, = ax.plot(curves[p], alpha=0.35, label=f"{p} (raw)")
        ax.plot(smooth[p], color=line.get_color(), label=f"{p} ({window}-episode mean)")
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward (mean over runs)")
    ax.legend()
    rep.files["reward_curves.svg"] = _svg(fig)
    plt.close(fig)

    # density of per-episode reward averaged over the run's steps
    dens_rows, fig = {}, plt.figure(figsize=(6, 4))
    ax = fig.gca()
    per_step = {p: np.concatenate([r.episode_rewards / len(r.episodes[0].steps) for r in rs])
                for p, rs in records.items()}
    lo = min(v.min() for v in per_step.values())
    hi = max(v.max() for v in per_step.values())
    pad = 5 * max(silverman_bandwidth(v) for v in per_step.values())
    grid = np.linspace(lo - pad, hi + pad, 512)
    for p, v in per_step.items():
        _, d = kde(v, grid)
        dens_rows[p] = d
        ax.plot(grid, d, label=p)
    ax.set_xlabel("average episodic reward")
    ax.set_ylabel("density")
    ax.legend()
    rep.files["reward_density.svg"] = _svg(fig)
    plt.close(fig)
    rep.files["density.csv"] = _csv_text(
        ["x"] + list(dens_rows), [[repr(float(g))] + [repr(float(dens_rows[p][i])) for p in dens_rows]
                                  for i, g in enumerate(grid)])

    for p, rs in records.items():
        fits = fit_records(rs, pooling)
        coef_rows, totals, r2_lines = [], defaultdict(float), []
        for fit in fits:
            tag = (fit.digest or "unknown")[:12]
            for gid, (c, lab) in enumerate(zip(fit.result.coefficients, fit.labels)):
                coef_rows.append([tag, gid, GraphClass(lab).pretty, repr(float(c))])
            for cls, total in group_by_class(fit.result, fit.labels).items():
                totals[cls] += total
            flag = " (constant target; r2 set to 0)" if fit.result.constant_target else ""
            if fit.result.saturated:
                flag = f" (saturated: rank {fit.result.rank} >= episodes - 1, r2 is 1 by construction)"
            r2_lines.append(f"{tag} runs={','.join(map(str, fit.runs))} r2={fit.result.r_squared:.6f}{flag}")
        rep.files[f"{p}/coefficients.csv"] = _csv_text(["group", "graph_id", "class", "coefficient"], coef_rows)
        rep.files[f"{p}/class_sums.csv"] = _csv_text(
            ["class", "coefficient_sum"], [[c.pretty, repr(totals[c])] for c in GraphClass])
        rep.files[f"{p}/r2.txt"] = "\n".join(r2_lines) + "\n"

        ranked = sorted(GraphClass, key=lambda c: -totals[c])
        positive = [c.pretty for c in ranked if totals[c] > 0]
        rep.notes.append(f"{p}: classes by summed coefficient: " + ", ".join(
            f"{c.pretty}={totals[c]:+.4f}" for c in ranked))
        rep.notes.append(f"{p}: net positive classes: {', '.join(positive) or 'none'}")

        fig, ax = plt.subplots(figsize=(8, 3.5))
        if len(fits) == 1:
            ax.bar(np.arange(len(fits[0].labels)), fits[0].result.coefficients,
                   color=[f"C{lab}" for lab in fits[0].labels])
            ax.set_xlabel("graph id (colour = class)")
        else:
            for i, fit in enumerate(fits):
                ax.plot(fit.result.coefficients, ".", alpha=0.6, label=(fit.digest or "?")[:8])
            ax.set_xlabel("graph id (one series per dataset)")
        ax.set_ylabel("regression coefficient")
        rep.files[f"{p}/coefficients.svg"] = _svg(fig)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar([c.pretty for c in GraphClass], [totals[c] for c in GraphClass],
               color=[f"C{int(c)}" for c in GraphClass])
        ax.tick_params(axis="x", rotation=45)
        ax.set_ylabel("summed coefficient")
        fig.tight_layout()
        rep.files[f"{p}/class_sums.svg"] = _svg(fig)
        plt.close(fig)

    if len(records) > 1:
        for p, rs in records.items():
            last = np.mean([r.episode_rewards[-min(20, len(r.episodes)):].mean() for r in rs])
            rep.notes.append(f"{p}: mean episode reward over final episodes = {last:+.4f}")
    rep.files["notes.txt"] = "\n".join(rep.notes) + "\n"
    return rep


def emit_reports(records: Mapping[str, Sequence[RunRecord]], outdir: str | Path, pooling: str = "rows",
                 window: int = 10) -> list[Path]:
    """Build every report, then write them under ``outdir``.

    Everything is rendered before the first write, so a failure leaves no partial set.
    """
    rep = build_report(records, pooling, window)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return rep.write(outdir)
