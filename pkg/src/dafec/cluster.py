"""k-means cluster miner and pseudo-label assignment."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, InvariantError
from .sampling import Dataset, Instance, make_rng, pseudo_class_id

DUMP_FORMAT = "dafec-clusters"


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict
    inertia: float
    history: tuple = ()
    n_iter: int = 0

    def labels(self, ids) -> np.ndarray:
        return np.array([self.assignments[i] for i in ids])

    def sizes(self) -> np.ndarray:
        return np.bincount(np.fromiter(self.assignments.values(), dtype=int), minlength=self.k)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (lowest index wins ties) and its squared distance."""
    d = _sq_dists(x, centroids)
    lab = np.argmin(d, axis=1)
    return lab, d[np.arange(len(x)), lab]


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise InvalidArgumentError("not enough distinct points to seed k centroids")
        idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx : idx + 1])[:, 0])
    return np.array(centers)


def lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations from given centroids.

    Returns (centroids, labels, inertia, inertia history, iterations). The
    history holds the objective after every centroid update and is
    asserted non-increasing.
    """
    c = centroids.astype(np.float64, copy=True)
    k = len(c)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        lab, dist = assign(x, c)
        counts = np.bincount(lab, minlength=k)
        while np.any(counts == 0):
            # reseed an empty cluster at the point farthest from its centroid,
            # never emptying a singleton cluster in the process
            j = int(np.flatnonzero(counts == 0)[0])
            movable = np.where(counts[lab] > 1, dist, -1.0)
            far = int(np.argmax(movable))
            lab[far] = j
            dist[far] = 0.0
            counts = np.bincount(lab, minlength=k)
        new = np.zeros_like(c)
        np.add.at(new, lab, x)
        new /= counts[:, None]
        inertia = float(((x - new[lab]) ** 2).sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise InvariantError(f"k-means inertia increased at iteration {it}: {history[-1]} -> {inertia}")
        history.append(inertia)
        shift = float(np.sqrt(((new - c) ** 2).sum(axis=1)).max())
        c = new
        if shift < tol:
            break
    lab, dist = assign(x, c)
    return c, lab, float(dist.sum()), history, it


def kmeans(features, k: int, max_iter: int = 300, tol: float = 1e-6, rng=None, n_init: int = 10) -> ClusterModel:
    """Best-of-``n_init`` k-means++ / Lloyd clustering.

    ``features`` is a sequence of ``(id, vector)`` pairs. The restart with
    the lowest final inertia wins; earlier restarts win ties.
    """
    features = list(features)
    if not features:
        raise InvalidArgumentError("k-means needs at least one point")
    if k < 1 or max_iter < 1 or tol < 0 or n_init < 1:
        raise InvalidArgumentError(f"bad k-means settings k={k} max_iter={max_iter} tol={tol} n_init={n_init}")
    ids = [i for i, _ in features]
    x = np.array([np.asarray(v, dtype=np.float64) for _, v in features])
    distinct = len(np.unique(x, axis=0))
    if distinct < k:
        raise InvalidArgumentError(f"k-means with k={k} needs {k} distinct points, got {distinct}")
    rng = make_rng(rng)
    best = None
    for _ in range(n_init):
        init = kmeans_pp_init(x, k, rng)
        run = lloyd(x, init, max_iter, tol)
        if best is None or run[2] < best[2]:
            best = run
    c, lab, inertia, history, it = best
    return ClusterModel(k, c, {i: int(l) for i, l in zip(ids, lab)}, inertia, tuple(history), it)


def assign_pseudo_labels(cm: ClusterModel, target: Dataset) -> Dataset:
    """Relabel every target instance with its cluster's pseudo class id."""
    out = []
    for inst in target.instances:
        if inst.id not in cm.assignments:
            raise InvariantError(f"instance {inst.id!r} has no cluster assignment")
        out.append(Instance(inst.id, inst.features, pseudo_class_id(cm.assignments[inst.id]), inst.domain))
    return Dataset(tuple(out))


def save_cluster_dump(cm: ClusterModel, path) -> None:
    doc = {
        "format": DUMP_FORMAT,
        "k": cm.k,
        "inertia": cm.inertia,
        "iterations": cm.n_iter,
        "centroids": cm.centroids.tolist(),
        "assignments": cm.assignments,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_cluster_dump(path) -> ClusterModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != DUMP_FORMAT:
        raise InvalidArgumentError(f"{path}: not a cluster dump")
    return ClusterModel(
        int(doc["k"]),
        np.asarray(doc["centroids"], dtype=np.float64),
        {str(k): int(v) for k, v in doc["assignments"].items()},
        float(doc["inertia"]),
        n_iter=int(doc.get("iterations", 0)),
    )
