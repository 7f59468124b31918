"""Plot-ready CSV files: loss traces, the lambda schedule, cluster-quality
bars and a 2-D principal-component scatter of target features.

Nothing here draws; every function writes plain CSV for any plotting tool.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .losses import AnnealSchedule, lambda_at
from .metrics import RunReport
from .pipeline import TrainConfig


def _writer(path):
    fh = Path(path).open("w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def power_iteration_pca(x, n_components: int = 2, tol: float = 1e-8, max_iter: int = 10000):
    """Top principal directions by power iteration with deflation.

    Returns (components, eigenvalues); components are unit rows with their
    largest-magnitude entry made positive so the output is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InvalidArgumentError("PCA needs a 2-D array with at least two rows")
    if n_components > x.shape[1]:
        raise InvalidArgumentError(f"{n_components} components requested from {x.shape[1]} dimensions")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    comps, vals = [], []
    for c in range(n_components):
        # fixed, non-degenerate start vector
        v = np.linspace(1.0, 2.0, cov.shape[0]) + c
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol
            v = w
            if done:
                break
        else:
            raise NumericError(f"power iteration did not converge for component {c}")
        lam = float(v @ cov @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(lam)
        cov = cov - lam * np.outer(v, v)
    return np.array(comps), np.array(vals)


def project_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    comps, _ = power_iteration_pca(x, 2)
    return (x - x.mean(axis=0)) @ comps.T


def write_loss_traces(traces: Mapping[str, Sequence[float]], path) -> None:
    """One row per iteration, one column per trace; shorter traces leave blanks."""
    names = [k for k in traces if k != "extractor_lambda"]
    rows = max((len(traces[k]) for k in names), default=0)
    fh, w = _writer(path)
    with fh:
        w.writerow(["iteration", *names])
        for i in range(rows):
            w.writerow([i, *(repr(traces[k][i]) if i < len(traces[k]) else "" for k in names)])


def write_lambda_schedule(sched: AnnealSchedule, path, points: int = 101) -> None:
    """Lambda sampled on an even grid over [0, T], endpoints included."""
    if points < 2:
        raise InvalidArgumentError("need at least two schedule points")
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "lambda"])
        for j in range(points):
            t = sched.T * j / (points - 1)
            w.writerow([repr(t), repr(lambda_at(sched, t))])


def write_cluster_bars(rows: Mapping[str, Mapping], path) -> None:
    """DBI and FMI per run variant (blank when a value is unavailable)."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["variant", "dbi", "fmi"])
        for name, r in rows.items():
            w.writerow([name, *("" if r.get(m) is None else repr(float(r[m])) for m in ("dbi", "fmi"))])


def write_pca_scatter(features, ids: Sequence[str], gold: Mapping | None, path) -> None:
    xy = project_2d(features)
    fh, w = _writer(path)
    with fh:
        w.writerow(["id", "pc1", "pc2", "gold"])
        for i, (a, b) in zip(ids, xy):
            w.writerow([i, repr(float(a)), repr(float(b)), "" if gold is None else gold.get(i, "")])


def emit_plot_data(reports: Mapping[str, RunReport], out_dir, features=None, ids=None, gold=None) -> dict:
    """Write every plot file for a set of named reports; returns paths by role.

    Loss traces are written per report. The lambda file uses the first
    report's schedule. The scatter needs ``features`` and ``ids``.
    """
    if not reports:
        raise InvalidArgumentError("emit_plot_data needs at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, rep in reports.items():
        p = out / f"loss_traces_{name}.csv"
        write_loss_traces(rep.traces, p)
        paths[f"loss_traces_{name}"] = p
    first = next(iter(reports.values()))
    sched = TrainConfig.from_dict(first.config).schedule() if first.config else TrainConfig().schedule()
    paths["lambda"] = out / "lambda_schedule.csv"
    write_lambda_schedule(sched, paths["lambda"])
    paths["cluster_bars"] = out / "cluster_quality.csv"
    write_cluster_bars({n: {"dbi": r.dbi, "fmi": r.fmi} for n, r in reports.items()}, paths["cluster_bars"])
    if features is not None:
        paths["scatter"] = out / "target_pca.csv"
        write_pca_scatter(features, ids, gold, paths["scatter"])
    return paths
