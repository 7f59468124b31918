"""Four-stage training pipeline, evaluation and ablation harness.

Stage 1 trains the representation extractor with episodic prototypical
loss plus the clustering promotion terms; Stage 2 encodes the unlabeled
target pool; Stage 3 clusters it into pseudo classes; Stage 4 trains a
fresh prototypical classifier on source + pseudo-labeled data.

Every stage draws randomness from its own stream derived from
``cfg.seed``, so skipping a stage never shifts another stage's draws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses
from .cluster import ClusterModel, assign_pseudo_labels, kmeans, save_cluster_dump
from .errors import CapacityError, InvalidArgumentError, NumericError, StageError
from .metrics import EpisodeResult, RunReport, davies_bouldin, fowlkes_mallows
from .models import (
    MLP,
    OptimizerState,
    discriminate,
    encode,
    init_discriminator,
    init_extractor,
    save_checkpoint,
    sgd_step,
)
from .numerics import Tensor
from .sampling import Dataset, Episode, is_pseudo_class, make_rng, merge_datasets, sample_episode

log = logging.getLogger(__name__)

STAGES = ("train_extractor", "extract_features", "mine_pseudo_labels", "train_classifier", "evaluate")

_STREAMS = {
    "extractor_init": 1,
    "discriminator_init": 2,
    "extractor_sampling": 3,
    "kmeans": 4,
    "classifier_init": 5,
    "classifier_sampling": 6,
    "evaluate": 7,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named stage of a seeded run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],)))


def _init_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**63))


@dataclass(frozen=True)
class TrainConfig:
    # episode shape used during training
    n: int = 5
    k: int = 5
    m: int = 5
    tau: float = 2.0
    anneal: str = "cosine"
    anneal_T: int = 6000
    anneal_constant: float = 0.5
    eq9_literal: bool = False
    entropy_sign: str = "negated"
    clusters: int = 10
    lr: float = 0.1
    total_iters: int = 10000
    classifier_iters: int | None = None
    seed: int = 0
    hidden: tuple = (64,)
    feature_dim: int = 32
    disc_hidden: int = 32
    no_pseudo: bool = False
    no_cpm_s: bool = False
    no_cpm_a: bool = False
    no_cpm_c: bool = False
    pseudo_fraction: float | None = None
    warm_start: bool = False
    early_stop: bool = False
    patience: int = 500
    min_delta: float = 1e-4
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    eval_n: int = 5
    eval_k: int = 1
    eval_m: int = 5
    episodes: int = 1000

    def __post_init__(self):
        for name in ("n", "k", "anneal_T", "clusters", "total_iters", "feature_dim", "disc_hidden", "episodes"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.m < 1:
            raise InvalidArgumentError("m must be >= 1")
        if not self.tau > 0 or not self.lr > 0:
            raise InvalidArgumentError("tau and lr must be > 0")
        if self.entropy_sign not in ("as_written", "negated"):
            raise InvalidArgumentError(f"unknown entropy sign {self.entropy_sign!r}")
        if self.pseudo_fraction is not None and not 0.0 <= self.pseudo_fraction <= 1.0:
            raise InvalidArgumentError("pseudo_fraction must be in [0, 1]")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.schedule()  # validates anneal settings

    def schedule(self) -> losses.AnnealSchedule:
        if self.no_cpm_c:
            return losses.AnnealSchedule(self.anneal_T, "constant", self.anneal_constant)
        return losses.AnnealSchedule(self.anneal_T, self.anneal, self.anneal_constant, self.eq9_literal)

    def arch(self, d_in: int) -> tuple:
        return (d_in, *self.hidden, self.feature_dim)

    @property
    def uses_cpm(self) -> bool:
        return not (self.no_cpm_s and self.no_cpm_a)

    @property
    def n_classifier_iters(self) -> int:
        return self.total_iters if self.classifier_iters is None else self.classifier_iters

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def desk_config(**overrides) -> TrainConfig:
    """Settings sized for the synthetic benchmark on one CPU core.

    Shorter training with a matching annealing horizon and a smaller step
    size; at lr 0.1 the entropy term destabilizes such short runs.
    """
    base = dict(lr=0.03, total_iters=500, anneal_T=300, episodes=300)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainResult:
    net: MLP
    traces: dict
    discriminator: MLP | None = None


@dataclass
class PipelineState:
    extractor: MLP | None = None
    discriminator: MLP | None = None
    classifier: MLP | None = None
    t: int = 0
    traces: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)


# -- helpers --------------------------------------------------------------------

def _check_finite(value: Tensor, term: str, it: int) -> None:
    if not np.isfinite(value.data).all():
        raise NumericError(f"non-finite {term} loss at iteration {it}")


def _step(net: MLP, tracked: MLP, opt: OptimizerState, term: str, it: int) -> MLP:
    try:
        return sgd_step(net, tracked.grads(), opt)
    except NumericError as exc:
        raise NumericError(f"{exc} ({term} update, iteration {it})") from exc


def episode_ce(net, ds: Dataset, ep: Episode) -> Tensor:
    """Prototypical loss of one episode, encoding support and query in one pass."""
    s_ids, q_ids = ep.support_ids(), ep.query_ids()
    feats = encode(net, ds.matrix(s_ids + q_ids))
    k = ep.shot
    ns = len(s_ids)
    support = [(c, feats[i * k : (i + 1) * k]) for i, c in enumerate(ep.classes)]
    return losses.proto_ce_loss(support, feats[ns:], ep.query_labels())


def _classes_with_capacity(ds: Dataset, need: int) -> list:
    return [c for c, ids in ds.class_index.items() if len(ids) >= need]


def sample_training_episode(ds: Dataset, cfg: TrainConfig, rng, pool: Sequence | None = None) -> Episode:
    """Episode from the merged label space under the configured mixing policy."""
    if cfg.pseudo_fraction is None:
        return sample_episode(ds, cfg.n, cfg.k, cfg.m, rng, classes=pool)
    pool = list(ds.class_index) if pool is None else list(pool)
    pseudo = [c for c in pool if is_pseudo_class(c)]
    real = [c for c in pool if not is_pseudo_class(c)]
    n_p = min(len(pseudo), int(round(cfg.pseudo_fraction * cfg.n)))
    n_r = cfg.n - n_p
    if len(real) < n_r:
        raise CapacityError(f"need {n_r} source classes, have {len(real)}")
    a = sample_episode(ds, n_p, cfg.k, cfg.m, rng, classes=pseudo) if n_p else None
    b = sample_episode(ds, n_r, cfg.k, cfg.m, rng, classes=real) if n_r else None
    parts = [e for e in (a, b) if e is not None]
    return Episode(
        tuple(c for e in parts for c in e.classes),
        {c: ids for e in parts for c, ids in e.support.items()},
        {c: ids for e in parts for c, ids in e.query.items()},
    )


# -- stage 1 --------------------------------------------------------------------

def train_extractor(d_s: Dataset, d_ut: Dataset, cfg: TrainConfig) -> TrainResult:
    """Stage 1: alternate the CE step, the discriminator step and the CPM step.

    Per iteration: update E on the prototypical loss; update D on the
    domain loss with E's features held fixed; update E on
    ``(1 - lam) * L_enc + lam * L_entropy`` with D held fixed. Disabled
    components drop out of the third step; with both off the loop is a
    plain prototypical network.
    """
    if d_s.dim != d_ut.dim:
        raise InvalidArgumentError(f"source dim {d_s.dim} != target dim {d_ut.dim}")
    net = init_extractor(cfg.arch(d_s.dim), _init_seed(cfg.seed, "extractor_init"))
    disc = init_discriminator(cfg.feature_dim, _init_seed(cfg.seed, "discriminator_init"), cfg.disc_hidden)
    rng = stream(cfg.seed, "extractor_sampling")
    opt = OptimizerState(cfg.lr)
    sched = cfg.schedule()
    use_s, use_a = not cfg.no_cpm_s, not cfg.no_cpm_a
    u_size = cfg.n * cfg.k
    pool = _classes_with_capacity(d_s, cfg.k + cfg.m)
    traces = {"ce": [], "dis": [], "enc": [], "ent": [], "lambda": []}
    best, stale = math.inf, 0

    for it in range(cfg.total_iters):
        ep = sample_episode(d_s, cfg.n, cfg.k, cfg.m, rng, classes=pool)
        u_rows = rng.choice(len(d_ut), size=u_size, replace=False) if (use_s or use_a) else None
        lam = losses.lambda_at(sched, it)
        traces["lambda"].append(lam)

        # step 1: prototypical loss
        tracked = net.track()
        ce = episode_ce(tracked, d_s, ep)
        _check_finite(ce, "cross-entropy", it)
        ce.backward()
        net = _step(net, tracked, opt, "cross-entropy", it)
        traces["ce"].append(ce.item())

        if not (use_s or use_a):
            if cfg.early_stop:
                if ce.item() < best - cfg.min_delta:
                    best, stale = ce.item(), 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("early stop at iteration %d", it)
                        break
            continue

        x_s = d_s.matrix(ep.support_ids())
        x_u = d_ut.features[u_rows]

        # step 2: discriminator on fixed features
        if use_a:
            f_s = encode(net, x_s).detach()
            f_u = encode(net, x_u).detach()
            dt = disc.track()
            dis = losses.discriminator_loss(discriminate(dt, f_s), discriminate(dt, f_u))
            _check_finite(dis, "discriminator", it)
            dis.backward()
            disc = _step(disc, dt, opt, "discriminator", it)
            traces["dis"].append(dis.item())

        # step 3: adversarial + similarity entropy, discriminator frozen
        tracked = net.track()
        feats = encode(tracked, np.vstack([x_s, x_u]))
        f_s, f_u = feats[: len(x_s)], feats[len(x_s) :]
        total = None
        if use_a:
            enc = losses.extractor_adv_loss(discriminate(disc, f_s), discriminate(disc, f_u))
            _check_finite(enc, "adversarial", it)
            traces["enc"].append(enc.item())
            total = (1.0 - lam) * enc
        if use_s:
            ent = losses.similarity_entropy_loss(f_u, cfg.tau, cfg.entropy_sign)
            _check_finite(ent, "entropy", it)
            traces["ent"].append(ent.item())
            total = lam * ent if total is None else total + lam * ent
        total.backward()
        net = _step(net, tracked, opt, "clustering-promotion", it)

        if cfg.early_stop:
            if ce.item() < best - cfg.min_delta:
                best, stale = ce.item(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at iteration %d", it)
                    break

    return TrainResult(net, traces, disc if use_a else None)


# -- stages 2 and 3 -------------------------------------------------------------

def extract_features(net: MLP, d_ut: Dataset) -> list[tuple[str, np.ndarray]]:
    """Stage 2: encode every target instance (one batched forward pass)."""
    if d_ut.dim != net.dims[0]:
        raise InvalidArgumentError(f"dataset dim {d_ut.dim} != extractor input {net.dims[0]}")
    feats = encode(net, d_ut.features).data
    return [(i, feats[r]) for r, i in enumerate(d_ut.ids)]


def mine_pseudo_labels(features, d_ut: Dataset, cfg: TrainConfig, rng=None) -> tuple[Dataset, ClusterModel]:
    """Stage 3: k-means with ``cfg.clusters`` clusters, then pseudo labels."""
    rng = stream(cfg.seed, "kmeans") if rng is None else make_rng(rng)
    cm = kmeans(features, cfg.clusters, cfg.kmeans_max_iter, cfg.kmeans_tol, rng, cfg.kmeans_restarts)
    return assign_pseudo_labels(cm, d_ut), cm


# -- stage 4 --------------------------------------------------------------------

def train_protonet(ds: Dataset, cfg: TrainConfig, init: MLP | None = None) -> TrainResult:
    """Episodic prototypical-network training over every class of ``ds``.

    Classes with fewer than K + M instances (small pseudo clusters) are
    left out of the episode pool.
    """
    net = init if init is not None else init_extractor(cfg.arch(ds.dim), _init_seed(cfg.seed, "classifier_init"))
    rng = stream(cfg.seed, "classifier_sampling")
    opt = OptimizerState(cfg.lr)
    pool = _classes_with_capacity(ds, cfg.k + cfg.m)
    if len(pool) < cfg.n:
        raise CapacityError(f"only {len(pool)} classes have >= {cfg.k + cfg.m} instances; need {cfg.n}")
    traces = {"ce": []}
    for it in range(cfg.n_classifier_iters):
        ep = sample_training_episode(ds, cfg, rng, pool)
        tracked = net.track()
        ce = episode_ce(tracked, ds, ep)
        _check_finite(ce, "classifier cross-entropy", it)
        ce.backward()
        net = _step(net, tracked, opt, "classifier cross-entropy", it)
        traces["ce"].append(ce.item())
    return TrainResult(net, traces)


def train_classifier(d_merged: Dataset, cfg: TrainConfig, warm: MLP | None = None) -> TrainResult:
    """Stage 4: fresh prototypical classifier on source + pseudo data.

    ``warm`` (with ``cfg.warm_start``) starts from the Stage-1 extractor
    instead of a fresh initialization.
    """
    init = warm if (cfg.warm_start and warm is not None) else None
    return train_protonet(d_merged, cfg, init)


# -- evaluation -----------------------------------------------------------------

def predict_episode(feats: np.ndarray, ds: Dataset, ep: Episode, rows: dict) -> list:
    """Nearest-prototype labels for the episode's queries (lowest index wins ties)."""
    k = ep.shot
    s = feats[[rows[i] for i in ep.support_ids()]].reshape(ep.way, k, -1).mean(axis=1)
    q = feats[[rows[i] for i in ep.query_ids()]]
    d = ((q[:, None, :] - s[None, :, :]) ** 2).sum(axis=-1)
    return [ep.classes[j] for j in np.argmin(d, axis=1)]


def evaluate(classifier: MLP, d_test: Dataset, n: int, k: int, m: int, episodes: int, rng) -> RunReport:
    """Mean and std accuracy over ``episodes`` N-way-K-shot test episodes."""
    rng = make_rng(rng)
    feats = encode(classifier, d_test.features).data
    results = []
    for _ in range(episodes):
        ep = sample_episode(d_test, n, k, m, rng)
        preds = predict_episode(feats, d_test, ep, d_test.rows)
        golds = ep.query_labels()
        per = {}
        for p, g in zip(preds, golds):
            c, t = per.get(g, (0, 0))
            per[g] = (c + (p == g), t + 1)
        correct = sum(p == g for p, g in zip(preds, golds))
        results.append(EpisodeResult(int(correct), len(golds), per))
    return RunReport.from_results(n, k, results)


# -- end to end -----------------------------------------------------------------

@dataclass
class RunArtifacts:
    state: PipelineState
    features: list | None = None
    clusters: ClusterModel | None = None
    pseudo: Dataset | None = None
    merged: Dataset | None = None


def run_all(d_s: Dataset, d_ut: Dataset, d_test: Dataset, cfg: TrainConfig, out_dir=None) -> tuple[RunReport, RunArtifacts]:
    """Stages 1-4 then evaluation, honoring the ablation flags.

    When ``out_dir`` is given, stage artifacts are written there as they
    are produced. FMI is left unset: it needs hidden gold labels, which the
    pipeline never touches.
    """
    state = PipelineState()
    art = RunArtifacts(state)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def run(stage, fn):
        try:
            result = fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        state.stages.append(stage)
        return result

    dbi = None
    train_set = d_s
    if not cfg.no_pseudo:
        stage1 = run("train_extractor", lambda: train_extractor(d_s, d_ut, cfg))
        state.extractor, state.discriminator = stage1.net, stage1.discriminator
        state.traces.update({f"extractor_{k}": v for k, v in stage1.traces.items()})
        state.t = len(stage1.traces["ce"])
        if out is not None:
            save_checkpoint(stage1.net, out / "extractor.json")
        art.features = run("extract_features", lambda: extract_features(stage1.net, d_ut))
        if out is not None:
            save_features(art.features, out / "features.jsonl")
        art.pseudo, art.clusters = run("mine_pseudo_labels", lambda: mine_pseudo_labels(art.features, d_ut, cfg))
        if out is not None:
            save_cluster_dump(art.clusters, out / "clusters.json")
        labels = art.clusters.labels([i for i, _ in art.features])
        if len(set(labels.tolist())) >= 2:
            dbi = davies_bouldin(np.array([f for _, f in art.features]), labels)
        train_set = art.merged = merge_datasets(d_s, art.pseudo)

    stage4 = run(
        "train_classifier",
        lambda: train_classifier(train_set, cfg, state.extractor),
    )
    state.classifier = stage4.net
    state.traces["classifier_ce"] = stage4.traces["ce"]
    if out is not None:
        save_checkpoint(stage4.net, out / "classifier.json")

    report = run(
        "evaluate",
        lambda: evaluate(stage4.net, d_test, cfg.eval_n, cfg.eval_k, cfg.eval_m, cfg.episodes, stream(cfg.seed, "evaluate")),
    )
    report.dbi = dbi
    report.traces = state.traces
    report.config = cfg.to_dict()
    report.seed = cfg.seed
    report.stages = list(state.stages)
    if out is not None:
        report.save(out / "report.json")
        report.save_episode_csv(out / "episodes.csv")
    return report, art


def save_features(features, path) -> None:
    import json

    with Path(path).open("w", encoding="utf-8") as fh:
        for i, f in features:
            fh.write(json.dumps({"id": i, "features": [float(v) for v in f]}) + "\n")


# -- analysis -------------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "no_pseudo": {"no_pseudo": True},
    "no_cpm_s": {"no_cpm_s": True},
    "no_cpm_a": {"no_cpm_a": True},
    "no_cpm_c": {"no_cpm_c": True},
    "linear": {"anneal": "linear"},
}


def cluster_quality(net: MLP, d_ut: Dataset, gold: dict, cfg: TrainConfig) -> dict:
    """DBI of the k-means partition and FMI of pseudo vs gold labels.

    Takes the gold labels as an argument: this is an analysis helper,
    never called from the training stages.
    """
    feats = extract_features(net, d_ut)
    _, cm = mine_pseudo_labels(feats, d_ut, cfg)
    ids = [i for i, _ in feats]
    pred = cm.labels(ids)
    x = np.array([f for _, f in feats])
    return {
        "dbi": davies_bouldin(x, pred),
        "fmi": fowlkes_mallows(pred.tolist(), [gold[i] for i in ids]),
        "features": x,
        "ids": ids,
    }


def cpm_validation(d_s: Dataset, d_ut: Dataset, gold: dict, cfg: TrainConfig) -> dict:
    """Cluster quality of target features with and without the CPM terms."""
    with_cpm = train_extractor(d_s, d_ut, replace(cfg, no_cpm_s=False, no_cpm_a=False))
    without = train_extractor(d_s, d_ut, replace(cfg, no_cpm_s=True, no_cpm_a=True))
    return {
        "w_cpm": cluster_quality(with_cpm.net, d_ut, gold, cfg),
        "wo_cpm": cluster_quality(without.net, d_ut, gold, cfg),
    }


def ablate(d_s, d_ut, d_test, cfg: TrainConfig, seeds: Sequence[int], variants: Sequence[str] | None = None) -> list[dict]:
    """Run every ablation variant for every seed; one row per (variant, seed)."""
    variants = list(ABLATIONS) if variants is None else list(variants)
    rows = []
    for name in variants:
        if name not in ABLATIONS:
            raise InvalidArgumentError(f"unknown ablation {name!r}")
        for seed in seeds:
            vcfg = replace(cfg, seed=int(seed), **ABLATIONS[name])
            report, _ = run_all(d_s, d_ut, d_test, vcfg)
            rows.append({
                "variant": name,
                "seed": int(seed),
                "accuracy_mean": report.accuracy_mean,
                "accuracy_std": report.accuracy_std,
                "dbi": report.dbi,
            })
    return rows


def summarize_ablation(rows: Sequence[dict]) -> list[dict]:
    """Seed-averaged accuracy per variant, in first-seen variant order."""
    out = {}
    for r in rows:
        out.setdefault(r["variant"], []).append(r["accuracy_mean"])
    return [{"variant": v, "accuracy": float(np.mean(a)), "seeds": len(a)} for v, a in out.items()]
