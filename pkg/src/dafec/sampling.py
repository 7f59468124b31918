"""Datasets, episodic N-way-K-shot sampling and the pseudo-label merge.

Dataset files are JSON lines, one instance per line::

    {"id": "s0-12", "domain": "source", "label": "s0", "features": [0.1, ...]}

``label`` is ``null`` for unlabeled target data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, InvalidArgumentError, InvariantError

DOMAINS = ("source", "target")
PSEUDO_PREFIX = "pseudo:"
GOLD_SUFFIX = ".gold.jsonl"


@dataclass(frozen=True)
class Instance:
    id: str
    features: np.ndarray
    label: str | None = None
    domain: str = "source"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise InvalidArgumentError(f"instance {self.id}: unknown domain {self.domain!r}")
        if self.label == "":
            raise InvalidArgumentError(f"instance {self.id}: empty label")


@dataclass(frozen=True)
class Dataset:
    """Immutable list of instances plus a class -> ids index.

    The feature matrix and id -> row lookup are built once so samplers can
    slice arrays instead of walking Python objects.
    """

    instances: tuple[Instance, ...]
    class_index: dict = field(init=False, compare=False)
    features: np.ndarray = field(init=False, compare=False, repr=False)
    rows: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        insts = tuple(self.instances)
        object.__setattr__(self, "instances", insts)
        rows, index = {}, {}
        dims = {np.shape(i.features)[-1] for i in insts}
        if len(dims) > 1:
            raise InvalidArgumentError(f"feature dimensions differ within dataset: {sorted(dims)}")
        for r, inst in enumerate(insts):
            if inst.id in rows:
                raise InvariantError(f"duplicate instance id {inst.id!r}")
            rows[inst.id] = r
            if inst.label is not None:
                index.setdefault(inst.label, []).append(inst.id)
        feats = np.array([i.features for i in insts], dtype=np.float64) if insts else np.zeros((0, 0))
        if feats.size and not np.all(np.isfinite(feats)):
            raise InvalidArgumentError("dataset contains non-finite features")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "class_index", {k: tuple(v) for k, v in index.items()})
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1]) if len(self) else 0

    @property
    def classes(self) -> list:
        return list(self.class_index)

    @property
    def ids(self) -> list[str]:
        return [i.id for i in self.instances]

    def get(self, inst_id: str) -> Instance:
        return self.instances[self.rows[inst_id]]

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        return self.features[[self.rows[i] for i in ids]]

    def unlabeled(self) -> Dataset:
        return Dataset(tuple(Instance(i.id, i.features, None, i.domain) for i in self.instances))


@dataclass(frozen=True)
class Episode:
    """One N-way-K-shot task; ``support[c]`` and ``query[c]`` are id tuples."""

    classes: tuple
    support: dict
    query: dict

    @property
    def way(self) -> int:
        return len(self.classes)

    @property
    def shot(self) -> int:
        return len(next(iter(self.support.values())))

    def support_ids(self) -> list[str]:
        return [i for c in self.classes for i in self.support[c]]

    def query_ids(self) -> list[str]:
        return [i for c in self.classes for i in self.query[c]]

    def query_labels(self) -> list:
        return [c for c in self.classes for _ in self.query[c]]


def make_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_episode(ds: Dataset, n: int, k: int, m: int, rng, classes: Sequence | None = None) -> Episode:
    """Draw N classes, then K support and M query instances per class.

    All draws are uniform without replacement. ``classes`` restricts the
    candidate class pool (used for mixing policies on merged datasets).
    """
    rng = make_rng(rng)
    pool = list(ds.class_index) if classes is None else list(classes)
    if n < 1 or k < 1 or m < 0:
        raise InvalidArgumentError(f"bad episode shape N={n} K={k} M={m}")
    if len(pool) < n:
        raise CapacityError(f"episode needs {n} classes but only {len(pool)} are available")
    chosen = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    support, query = {}, {}
    for cls in chosen:
        ids = ds.class_index[cls]
        if len(ids) < k + m:
            raise CapacityError(f"class {cls!r} has {len(ids)} instances, episode needs {k + m} (K={k}, M={m})")
        picked = rng.choice(len(ids), size=k + m, replace=False)
        support[cls] = tuple(ids[i] for i in picked[:k])
        query[cls] = tuple(ids[i] for i in picked[k:])
    return Episode(tuple(chosen), support, query)


def sample_unlabeled(ds: Dataset, size: int, rng) -> list[Instance]:
    rng = make_rng(rng)
    if size > len(ds):
        raise CapacityError(f"requested {size} instances from a dataset of {len(ds)}")
    if size < 0:
        raise InvalidArgumentError("size must be non-negative")
    return [ds.instances[i] for i in rng.choice(len(ds), size=size, replace=False)]


def merge_datasets(source: Dataset, pseudo: Dataset) -> Dataset:
    """Union of a labeled source set and a pseudo-labeled target set."""
    if len(source) and len(pseudo) and source.dim != pseudo.dim:
        raise InvalidArgumentError(f"feature dimension mismatch: {source.dim} vs {pseudo.dim}")
    clash = set(source.class_index) & set(pseudo.class_index)
    if clash:
        raise InvariantError(f"class ids collide between source and pseudo-labeled data: {sorted(clash)}")
    return Dataset(source.instances + pseudo.instances)


def pseudo_class_id(cluster: int) -> str:
    return f"{PSEUDO_PREFIX}{cluster}"


def is_pseudo_class(label) -> bool:
    return isinstance(label, str) and label.startswith(PSEUDO_PREFIX)


# -- file I/O -------------------------------------------------------------------

def _reject_gold(path: Path) -> None:
    if path.name.endswith(GOLD_SUFFIX):
        raise InvalidArgumentError(f"{path}: hidden gold-label files cannot be loaded as datasets")


def load_dataset(path) -> Dataset:
    """Read a JSONL dataset, checking ids, domains and dimension uniformity."""
    path = Path(path)
    _reject_gold(path)
    instances = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                inst = Instance(
                    str(rec["id"]),
                    np.asarray(rec["features"], dtype=np.float64),
                    rec.get("label"),
                    rec["domain"],
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise InvalidArgumentError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if inst.features.ndim != 1:
                raise InvalidArgumentError(f"{path}:{lineno}: features must be a flat list")
            instances.append(inst)
    return Dataset(tuple(instances))


def save_dataset(ds: Dataset | Iterable[Instance], path) -> None:
    _reject_gold(Path(path))
    insts = ds.instances if isinstance(ds, Dataset) else ds
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in insts:
            rec = {
                "id": inst.id,
                "domain": inst.domain,
                "label": inst.label,
                "features": [float(v) for v in inst.features],
            }
            fh.write(json.dumps(rec) + "\n")
