import numpy as np
import pytest

from dafec.cluster import kmeans
from dafec.errors import InvalidArgumentError
from dafec.metrics import fowlkes_mallows, load_gold_labels
from dafec.sampling import load_dataset
from dafec.synthetic import SyntheticSpec, generate_synthetic, write_synthetic


def test_same_seed_writes_identical_files(tmp_path):
    spec = SyntheticSpec(seed=11, samples_per_class=10)
    a = write_synthetic(generate_synthetic(spec), tmp_path / "a")
    b = write_synthetic(generate_synthetic(spec), tmp_path / "b")
    for role in a:
        assert a[role].read_bytes() == b[role].read_bytes()


def test_files_pass_load_validation(tmp_path, small_data):
    paths = write_synthetic(small_data, tmp_path)
    src = load_dataset(paths["source"])
    pool = load_dataset(paths["target_unlabeled"])
    test = load_dataset(paths["target_test"])
    assert src.dim == pool.dim == test.dim == 16
    assert not set(src.classes) & set(test.classes)
    assert pool.classes == []
    gold = load_gold_labels(paths["gold"])
    assert set(gold) == set(pool.ids)
    assert not set(pool.ids) & set(test.ids)


def test_split_sizes(small_data):
    spec = SyntheticSpec()
    assert len(small_data.source) == spec.source_classes * spec.samples_per_class
    assert len(small_data.target_unlabeled) == len(small_data.target_test) == 180
    assert all(len(v) == 30 for v in small_data.target_test.class_index.values())


def test_source_centroids_are_equidistant(small_data):
    c = small_data.source_centroids
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    off = d[~np.eye(len(c), dtype=bool)]
    np.testing.assert_allclose(off, 6.0, atol=1e-9)


def test_empirical_means_near_centroids(small_data):
    # per-class RMS coordinate error of the sample mean stays within 3 sigma / sqrt(n)
    n, sigma = 60, 1.0
    src = small_data.source
    for c, centroid in enumerate(small_data.source_centroids):
        mean = src.matrix(src.class_index[f"src{c}"]).mean(axis=0)
        assert np.sqrt(((mean - centroid) ** 2).mean()) <= 3 * sigma / np.sqrt(n)
    # target classes: pool and test together hold all n draws of a class
    gold = small_data.gold
    for c, centroid in enumerate(small_data.target_centroids):
        ids = [i for i, g in gold.items() if g == f"tgt{c}"]
        x = np.vstack([small_data.target_unlabeled.matrix(ids), small_data.target_test.matrix(small_data.target_test.class_index[f"tgt{c}"])])
        assert len(x) == n
        assert np.sqrt(((x.mean(axis=0) - centroid) ** 2).mean()) <= 3 * sigma / np.sqrt(n)


def test_shared_classes_are_transformed_source_classes(small_data):
    moved = small_data.source_centroids @ small_data.rotation.T + small_data.shift
    hits = sum(np.min(np.linalg.norm(moved - t, axis=1)) < 1e-9 for t in small_data.target_centroids)
    assert hits == 3
    assert np.allclose(small_data.rotation @ small_data.rotation.T, np.eye(16))


def test_noise_limit_recovers_partition():
    data = generate_synthetic(SyntheticSpec(noise_sigma=1e-9, seed=5))
    pool = data.target_unlabeled
    cm = kmeans(list(zip(pool.ids, pool.features)), 6, rng=0)
    assert fowlkes_mallows(cm.labels(pool.ids).tolist(), [data.gold[i] for i in pool.ids]) == 1.0


@pytest.mark.parametrize(
    "kw",
    [
        {"shared_fraction": 1.0, "source_classes": 2, "target_classes": 4},
        {"noise_sigma": 0.0},
        {"source_classes": 1},
        {"shared_fraction": 1.5},
        {"test_fraction": 1.0},
    ],
)
def test_invalid_specs(kw):
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(**kw)
