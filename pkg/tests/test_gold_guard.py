import inspect

import pytest

import dafec.cluster
import dafec.losses
import dafec.models
import dafec.numerics
import dafec.pipeline
import dafec.sampling
from dafec.cli import main
from dafec.errors import InvalidArgumentError
from dafec.metrics import load_gold_labels
from dafec.pipeline import extract_features, mine_pseudo_labels, run_all, train_classifier, train_extractor
from dafec.sampling import load_dataset, merge_datasets
from dafec.synthetic import write_synthetic

from gold_guard import gold_opens, recording

FAST = ["--iters", "20", "--anneal-T", "10", "--episodes", "20"]


@pytest.fixture(scope="module")
def files(tmp_path_factory, small_data):
    return write_synthetic(small_data, tmp_path_factory.mktemp("bench"))


def test_recorder_sees_gold_reads(files):
    with recording() as opened:
        load_gold_labels(files["gold"])
    assert gold_opens(opened) == [str(files["gold"])]


def test_dataset_loader_refuses_gold_without_opening(files):
    with recording() as opened, pytest.raises(InvalidArgumentError):
        load_dataset(files["gold"])
    assert gold_opens(opened) == []


def test_library_stages_never_open_gold(files, small_cfg, tmp_path):
    with recording() as opened:
        d_s, d_ut, d_test = (load_dataset(files[r]) for r in ("source", "target_unlabeled", "target_test"))
        net = train_extractor(d_s, d_ut, small_cfg).net
        pseudo, _ = mine_pseudo_labels(extract_features(net, d_ut), d_ut, small_cfg)
        train_classifier(merge_datasets(d_s, pseudo), small_cfg)
        run_all(d_s, d_ut, d_test, small_cfg, files["gold"].parent / "run")
    assert len(opened) > 3
    assert gold_opens(opened) == []


def test_cli_training_and_mining_never_open_gold(files, tmp_path):
    d, o = str(files["source"].parent), str(tmp_path)
    commands = [
        ["train-extractor", "--data", d, "--out", o, *FAST],
        ["extract", "--data", d, "--out", o, "--extractor", f"{o}/extractor.json"],
        ["mine", "--data", d, "--out", o, "--features", f"{o}/features.jsonl"],
        ["train-classifier", "--data", d, "--out", o, "--pseudo", f"{o}/pseudo.jsonl", *FAST],
        ["evaluate", "--data", d, "--out", o, "--classifier", f"{o}/classifier.json", "--episodes", "10"],
        ["run-all", "--data", d, "--out", f"{o}/all", *FAST],
    ]
    for argv in commands:
        with recording() as opened:
            assert main(argv) == 0
        assert gold_opens(opened) == [], argv[0]


def test_reporting_reads_gold_only_after_training(files, tmp_path, monkeypatch):
    # with --gold the sidecar is opened once, and not before evaluation ran
    seen_at_evaluate = []
    real = dafec.pipeline.evaluate

    def spy(*a, **kw):
        seen_at_evaluate.append(gold_opens(opened))
        return real(*a, **kw)

    monkeypatch.setattr(dafec.pipeline, "evaluate", spy)
    argv = ["run-all", "--data", str(files["source"].parent), "--out", str(tmp_path), "--gold", str(files["gold"]), *FAST]
    with recording() as opened:
        assert main(argv) == 0
    assert seen_at_evaluate == [[]]
    assert len(gold_opens(opened)) == 1


@pytest.mark.parametrize("module", [dafec.numerics, dafec.models, dafec.losses, dafec.sampling, dafec.cluster, dafec.pipeline])
def test_training_modules_have_no_gold_reader(module):
    assert "load_gold_labels" not in inspect.getsource(module)
