"""Two-domain Gaussian benchmark with a hidden target labeling.

Source classes are isotropic blobs whose centroids sit on mutually
orthogonal directions, so every pair is exactly ``class_separation``
apart. The target domain is the image of a rotation + translation: some
target classes are transformed copies of source classes, the rest are
fresh blobs placed on unused directions before the same transform.

The unlabeled target pool and the labeled target test set split every
target class. Gold labels of the pool go to a separate sidecar file that
only analysis code reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .metrics import save_gold_labels
from .sampling import GOLD_SUFFIX, Dataset, Instance, save_dataset

SOURCE_FILE = "source.jsonl"
UNLABELED_FILE = "target_unlabeled.jsonl"
GOLD_FILE = "target_unlabeled" + GOLD_SUFFIX
TEST_FILE = "target_test.jsonl"


@dataclass(frozen=True)
class SyntheticSpec:
    d_in: int = 16
    source_classes: int = 8
    target_classes: int = 6
    shared_fraction: float = 0.5
    samples_per_class: int = 60
    class_separation: float = 6.0
    noise_sigma: float = 1.0
    rotation: float = np.pi / 3
    translation: float = 3.0
    test_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise InvalidArgumentError(f"shared_fraction must be in [0, 1], got {self.shared_fraction}")
        if not self.noise_sigma > 0:
            raise InvalidArgumentError("noise_sigma must be > 0")
        if self.source_classes < 2 or self.target_classes < 2:
            raise InvalidArgumentError("need at least two source and two target classes")
        if self.n_shared > self.source_classes:
            raise InvalidArgumentError(
                f"{self.n_shared} shared target classes requested but only {self.source_classes} source classes exist"
            )
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidArgumentError("test_fraction must be in (0, 1)")
        if self.d_in < 2 or self.samples_per_class < 2:
            raise InvalidArgumentError("d_in and samples_per_class must be >= 2")

    @property
    def n_shared(self) -> int:
        return int(round(self.shared_fraction * self.target_classes))


@dataclass
class SyntheticData:
    source: Dataset
    target_unlabeled: Dataset
    target_test: Dataset
    gold: dict
    source_centroids: np.ndarray = field(repr=False)
    target_centroids: np.ndarray = field(repr=False)
    rotation: np.ndarray = field(repr=False)
    shift: np.ndarray = field(repr=False)


def _directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if count <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return q[:, :count].T
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    # the same planar rotation in floor(dim/2) orthogonal random planes
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    g = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        g[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return q @ g @ q.T


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    n_fresh = spec.target_classes - spec.n_shared
    dirs = _directions(spec.source_classes + n_fresh, spec.d_in, rng)
    radius = spec.class_separation / np.sqrt(2.0)
    src_c = radius * dirs[: spec.source_classes]
    rot = _rotation(spec.d_in, spec.rotation, rng)
    u = rng.standard_normal(spec.d_in)
    shift = spec.translation * u / np.linalg.norm(u)

    shared = rng.choice(spec.source_classes, size=spec.n_shared, replace=False)
    pre = np.vstack([src_c[shared], radius * dirs[spec.source_classes :]]) if n_fresh else src_c[shared]
    tgt_c = pre @ rot.T + shift

    n = spec.samples_per_class
    source = []
    for c in range(spec.source_classes):
        x = src_c[c] + spec.noise_sigma * rng.standard_normal((n, spec.d_in))
        source += [Instance(f"s{c}-{j}", x[j], f"src{c}", "source") for j in range(n)]

    n_test = int(round(spec.test_fraction * n))
    pool, test, gold = [], [], {}
    for c in range(spec.target_classes):
        x = (pre[c] + spec.noise_sigma * rng.standard_normal((n, spec.d_in))) @ rot.T + shift
        order = rng.permutation(n)
        for rank, j in enumerate(order):
            iid = f"t{c}-{j}"
            if rank < n - n_test:
                pool.append(Instance(iid, x[j], None, "target"))
                gold[iid] = f"tgt{c}"
            else:
                test.append(Instance(iid, x[j], f"tgt{c}", "target"))
    return SyntheticData(Dataset(tuple(source)), Dataset(tuple(pool)), Dataset(tuple(test)), gold, src_c, tgt_c, rot, shift)


def write_synthetic(data: SyntheticData, out_dir) -> dict:
    """Write the four benchmark files; returns their paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": out / SOURCE_FILE,
        "target_unlabeled": out / UNLABELED_FILE,
        "gold": out / GOLD_FILE,
        "target_test": out / TEST_FILE,
    }
    save_dataset(data.source, paths["source"])
    save_dataset(data.target_unlabeled, paths["target_unlabeled"])
    save_gold_labels(data.gold, paths["gold"])
    save_dataset(data.target_test, paths["target_test"])
    return paths
