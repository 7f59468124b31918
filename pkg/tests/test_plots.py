import csv

import numpy as np
import pytest
from scipy.stats import spearmanr

from dafec.errors import InvalidArgumentError
from dafec.losses import AnnealSchedule
from dafec.metrics import RunReport
from dafec.pipeline import TrainConfig
from dafec.plots import (
    emit_plot_data,
    power_iteration_pca,
    project_2d,
    write_cluster_bars,
    write_lambda_schedule,
)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_lambda_endpoints(tmp_path):
    write_lambda_schedule(AnnealSchedule(300), tmp_path / "l.csv")
    rows = _rows(tmp_path / "l.csv")
    assert rows[0] == ["t", "lambda"] and len(rows) == 102
    assert tuple(map(float, rows[1])) == (0.0, 0.0)
    assert tuple(map(float, rows[-1])) == (300.0, 1.0)


def test_bars_one_row_per_variant(tmp_path):
    write_cluster_bars({"w_cpm": {"dbi": 1.5, "fmi": 0.4}, "wo_cpm": {"dbi": 3.5, "fmi": None}}, tmp_path / "b.csv")
    rows = _rows(tmp_path / "b.csv")
    assert rows == [["variant", "dbi", "fmi"], ["w_cpm", "1.5", "0.4"], ["wo_cpm", "3.5", ""]]


def test_pca_matches_eigendecomposition(rng):
    x = rng.normal(size=(200, 6)) * np.array([5, 3, 1, 0.5, 0.2, 0.1])
    comps, vals = power_iteration_pca(x, 2)
    xc = x - x.mean(axis=0)
    w, v = np.linalg.eigh(xc.T @ xc / 199)
    for j in range(2):
        ref = v[:, -1 - j]
        assert abs(abs(comps[j] @ ref) - 1) < 1e-6
        assert abs(vals[j] - w[-1 - j]) < 1e-6 * w[-1]
    assert abs(comps[0] @ comps[1]) < 1e-6


def test_pca_preserves_distance_ranks_on_separated_clusters(rng):
    centers = rng.normal(size=(4, 10)) * 10
    x = np.vstack([c + rng.normal(size=(25, 10)) for c in centers])
    xy = project_2d(x)
    iu = np.triu_indices(len(x), 1)
    full = np.linalg.norm(x[:, None] - x[None], axis=-1)[iu]
    flat = np.linalg.norm(xy[:, None] - xy[None], axis=-1)[iu]
    assert spearmanr(full, flat).statistic > 0


def test_pca_errors():
    with pytest.raises(InvalidArgumentError):
        power_iteration_pca(np.zeros((1, 3)))
    with pytest.raises(InvalidArgumentError):
        power_iteration_pca(np.zeros((4, 1)), 2)


def test_emit_plot_data(tmp_path, rng):
    cfg = TrainConfig(anneal_T=50).to_dict()
    reps = {
        "full": RunReport(5, 1, 80.0, 5.0, [[4, 5]], dbi=1.2, fmi=0.5, traces={"extractor_ce": [1.0, 0.5], "classifier_ce": [0.9]}, config=cfg),
        "no_pseudo": RunReport(5, 1, 70.0, 5.0, [[3, 5]], config=cfg),
    }
    x = rng.normal(size=(6, 3))
    ids = [f"t{i}" for i in range(6)]
    paths = emit_plot_data(reps, tmp_path, x, ids, {i: "g" for i in ids})
    assert len(_rows(paths["cluster_bars"])) == 3
    assert _rows(paths["lambda"])[-1] == ["50.0", "1.0"]
    traces = _rows(paths["loss_traces_full"])
    assert traces[0] == ["iteration", "extractor_ce", "classifier_ce"] and traces[2] == ["1", "0.5", ""]
    scatter = _rows(paths["scatter"])
    assert scatter[0] == ["id", "pc1", "pc2", "gold"] and len(scatter) == 7
    with pytest.raises(InvalidArgumentError):
        emit_plot_data({}, tmp_path)
