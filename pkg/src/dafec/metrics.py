"""Few-shot accuracy aggregation, cluster-quality indices and run reports."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .sampling import GOLD_SUFFIX


@dataclass
class EpisodeResult:
    correct: int
    total: int
    per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.correct <= self.total:
            raise InvalidArgumentError(f"need 0 <= correct <= total, got {self.correct}/{self.total}")

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


def accuracy(preds: Sequence, golds: Sequence) -> float:
    if len(preds) != len(golds):
        raise InvalidArgumentError(f"length mismatch: {len(preds)} predictions vs {len(golds)} labels")
    if not preds:
        raise InvalidArgumentError("accuracy of an empty prediction list")
    return sum(p == g for p, g in zip(preds, golds)) / len(preds)


def aggregate(results: Sequence[EpisodeResult]) -> tuple[float, float]:
    """Mean and population std of per-episode accuracy, in percent."""
    if not results:
        raise InvalidArgumentError("cannot aggregate zero episodes")
    acc = np.array([r.correct / r.total for r in results]) * 100.0
    return float(acc.mean()), float(acc.std())


def davies_bouldin(features, labels: Sequence[Hashable]) -> float:
    """Davies-Bouldin index with Euclidean scatter and centroid distance.

    DBI = mean_i max_{j != i} (s_i + s_j) / |c_i - c_j|, with s_i the mean
    distance of cluster i's members to its centroid c_i. Lower is better.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if len(x) != len(labels):
        raise InvalidArgumentError("one label per feature vector required")
    classes = list(dict.fromkeys(labels))
    if len(classes) < 2:
        raise InvalidArgumentError("Davies-Bouldin index needs at least two clusters")
    index = {c: i for i, c in enumerate(classes)}
    lab = np.array([index[l] for l in labels])
    k = len(classes)
    cent = np.array([x[lab == i].mean(axis=0) for i in range(k)])
    scatter = np.array([np.linalg.norm(x[lab == i] - cent[i], axis=1).mean() for i in range(k)])
    sep = np.linalg.norm(cent[:, None, :] - cent[None, :, :], axis=-1)
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0:
                raise NumericError(f"clusters {classes[i]!r} and {classes[j]!r} have coincident centroids")
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / sep[i, j])
    return float(worst.mean())


def _pairs(counts) -> int:
    return int(sum(c * (c - 1) // 2 for c in counts))


def fowlkes_mallows(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> float:
    """Pair-counting Fowlkes-Mallows index from the contingency table.

    TP = pairs together in both labelings; FMI = TP / sqrt((TP+FP)(TP+FN)),
    taken as 0 when TP is 0.
    """
    if len(pred) != len(gold):
        raise InvalidArgumentError(f"length mismatch: {len(pred)} vs {len(gold)}")
    if len(pred) < 2:
        raise InvalidArgumentError("need at least two points")
    tp = _pairs(Counter(zip(pred, gold)).values())
    if tp == 0:
        return 0.0
    pred_pairs = _pairs(Counter(pred).values())
    gold_pairs = _pairs(Counter(gold).values())
    return float(tp / np.sqrt(float(pred_pairs) * float(gold_pairs)))


# -- hidden gold labels -----------------------------------------------------------

def load_gold_labels(path) -> dict:
    """Read the hidden id -> class sidecar written next to the unlabeled pool.

    Only analysis and reporting code calls this; training and mining never do.
    """
    path = Path(path)
    if not path.name.endswith(GOLD_SUFFIX):
        raise InvalidArgumentError(f"{path}: gold sidecars must end with {GOLD_SUFFIX}")
    gold = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                gold[str(rec["id"])] = rec["gold_label"]
    return gold


def save_gold_labels(gold: dict, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in gold.items():
            fh.write(json.dumps({"id": k, "gold_label": v}) + "\n")


# -- run report -------------------------------------------------------------------

@dataclass
class RunReport:
    n: int
    k: int
    accuracy_mean: float
    accuracy_std: float
    episodes: list = field(default_factory=list)
    dbi: float | None = None
    fmi: float | None = None
    traces: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0
    stages: list = field(default_factory=list)

    def __post_init__(self):
        if self.accuracy_std < 0:
            raise InvalidArgumentError("standard deviation must be non-negative")
        if self.fmi is not None and not 0.0 <= self.fmi <= 1.0:
            raise InvalidArgumentError(f"FMI must be in [0, 1], got {self.fmi}")

    @classmethod
    def from_results(cls, n: int, k: int, results: Sequence[EpisodeResult], **kw) -> RunReport:
        mean, std = aggregate(results)
        eps = [[r.correct, r.total] for r in results]
        return cls(n, k, mean, std, eps, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> RunReport:
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> RunReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save_episode_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "correct", "total", "accuracy"])
            for i, (c, t) in enumerate(self.episodes):
                w.writerow([i, c, t, repr(c / t)])
