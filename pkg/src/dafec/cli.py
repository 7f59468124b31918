"""Command-line entry point.

Every subcommand accepts ``--config`` (flat ``key = value`` file) and the
common training flags; flags override file values, file values override
the preset. Keys prefixed ``synthetic.`` configure the data generator, all
other keys are ``TrainConfig`` fields.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import pipeline
from .cluster import assign_pseudo_labels, load_cluster_dump, save_cluster_dump
from .errors import DafecError, InvalidArgumentError
from .metrics import RunReport, fowlkes_mallows, load_gold_labels
from .models import load_checkpoint, save_checkpoint
from .pipeline import ABLATIONS, TrainConfig, desk_config, stream
from .plots import emit_plot_data
from .sampling import load_dataset, merge_datasets, save_dataset
from .synthetic import SOURCE_FILE, TEST_FILE, UNLABELED_FILE, SyntheticSpec, generate_synthetic, write_synthetic

EXIT_OK, EXIT_USAGE = 0, 1
SYNTH_PREFIX = "synthetic."


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config -----------------------------------------------------------------------

def _coerce(raw: str, typ: str, key: str):
    typ = typ.replace(" ", "")
    if typ.endswith("|None"):
        if raw.lower() in ("none", ""):
            return None
        typ = typ[: -len("|None")]
    try:
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "tuple":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot read {raw!r} as {typ}") from None


def read_config(path) -> tuple[dict, dict]:
    """Parse a key-value file into (train overrides, synthetic overrides)."""
    train_types = {f.name: str(f.type) for f in fields(TrainConfig)}
    synth_types = {f.name: str(f.type) for f in fields(SyntheticSpec)}
    train, synth = {}, {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith(SYNTH_PREFIX):
            name = key[len(SYNTH_PREFIX) :]
            if name not in synth_types:
                raise UsageError(f"{path}:{lineno}: unknown synthetic key {name!r}")
            synth[name] = _coerce(raw, synth_types[name], key)
        elif key in train_types:
            train[key] = _coerce(raw, train_types[key], key)
        else:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
    return train, synth


_FLAG_KEYS = {
    "seed": "seed",
    "n": "n",
    "k": "k",
    "m": "m",
    "tau": "tau",
    "anneal": "anneal",
    "anneal_T": "anneal_T",
    "clusters": "clusters",
    "iters": "total_iters",
    "episodes": "episodes",
    "lr": "lr",
    "entropy_sign": "entropy_sign",
    "eval_n": "eval_n",
    "eval_k": "eval_k",
    "eval_m": "eval_m",
}
_SWITCHES = ("no_pseudo", "no_cpm_s", "no_cpm_a", "no_cpm_c", "eq9_literal", "warm_start")


def build_config(args) -> TrainConfig:
    file_train = read_config(args.config)[0] if args.config else {}
    over = dict(file_train)
    for flag, key in _FLAG_KEYS.items():
        if getattr(args, flag, None) is not None:
            over[key] = getattr(args, flag)
    for s in _SWITCHES:
        if getattr(args, s, False):
            over[s] = True
    try:
        return desk_config(**over) if args.preset == "desk" else TrainConfig(**over)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc


def build_spec(args) -> SyntheticSpec:
    synth = read_config(args.config)[1] if args.config else {}
    if args.seed is not None:
        synth["seed"] = args.seed
    try:
        return SyntheticSpec(**synth)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc


# -- manifest ---------------------------------------------------------------------

def write_manifest(out: Path, argv: list, cfg: TrainConfig | None, datasets: dict, spec: SyntheticSpec | None = None) -> Path:
    """Record what ran: argv replays the command, the rest documents it."""
    doc = {
        "command": list(argv),
        "config": cfg.to_dict() if cfg is not None else None,
        "synthetic": None if spec is None else {f.name: getattr(spec, f.name) for f in fields(spec)},
        "datasets": {k: str(v) for k, v in datasets.items()},
        "out": str(out),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


# -- dataset paths ----------------------------------------------------------------

def _data_path(args, attr: str, default_name: str) -> Path:
    explicit = getattr(args, attr, None)
    if explicit:
        return Path(explicit)
    if args.data is None:
        raise UsageError(f"--{attr.replace('_', '-')} or --data is required")
    return Path(args.data) / default_name


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _gold(args):
    # only reporting code reads the sidecar, after all training has finished
    return load_gold_labels(args.gold) if getattr(args, "gold", None) else None


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    spec = build_spec(args)
    out = _out(args)
    paths = write_synthetic(generate_synthetic(spec), out)
    write_manifest(out, argv, None, paths, spec)
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def cmd_train_extractor(args, argv) -> int:
    cfg = build_config(args)
    src, tgt = _data_path(args, "source", SOURCE_FILE), _data_path(args, "target", UNLABELED_FILE)
    out = _out(args)
    write_manifest(out, argv, cfg, {"source": src, "target": tgt})
    res = pipeline.train_extractor(load_dataset(src), load_dataset(tgt), cfg)
    save_checkpoint(res.net, out / "extractor.json")
    (out / "extractor_traces.json").write_text(json.dumps(res.traces) + "\n", encoding="utf-8")
    print(f"extractor: {len(res.traces['ce'])} iterations, final ce {res.traces['ce'][-1]:.4f}")
    return EXIT_OK


def cmd_extract(args, argv) -> int:
    tgt = _data_path(args, "target", UNLABELED_FILE)
    out = _out(args)
    write_manifest(out, argv, None, {"target": tgt, "extractor": args.extractor})
    feats = pipeline.extract_features(load_checkpoint(args.extractor), load_dataset(tgt))
    pipeline.save_features(feats, out / "features.jsonl")
    print(f"encoded {len(feats)} instances")
    return EXIT_OK


def _load_features(path) -> list:
    feats = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                feats.append((str(rec["id"]), np.asarray(rec["features"], dtype=np.float64)))
    return feats


def cmd_mine(args, argv) -> int:
    cfg = build_config(args)
    tgt = _data_path(args, "target", UNLABELED_FILE)
    out = _out(args)
    write_manifest(out, argv, cfg, {"target": tgt, "features": args.features})
    pseudo, cm = pipeline.mine_pseudo_labels(_load_features(args.features), load_dataset(tgt), cfg)
    save_cluster_dump(cm, out / "clusters.json")
    save_dataset(pseudo, out / "pseudo.jsonl")
    print(f"{cm.k} clusters, sizes {sorted(cm.sizes().tolist(), reverse=True)}")
    return EXIT_OK


def cmd_train_classifier(args, argv) -> int:
    cfg = build_config(args)
    src = _data_path(args, "source", SOURCE_FILE)
    out = _out(args)
    sets = {"source": src}
    ds = load_dataset(src)
    if args.pseudo:
        sets["pseudo"] = args.pseudo
        ds = merge_datasets(ds, load_dataset(args.pseudo))
    elif args.clusters_file:
        sets["clusters"] = args.clusters_file
        tgt = _data_path(args, "target", UNLABELED_FILE)
        sets["target"] = tgt
        ds = merge_datasets(ds, assign_pseudo_labels(load_cluster_dump(args.clusters_file), load_dataset(tgt)))
    warm = load_checkpoint(args.extractor) if args.extractor else None
    write_manifest(out, argv, cfg, sets)
    res = pipeline.train_classifier(ds, cfg, warm)
    save_checkpoint(res.net, out / "classifier.json")
    print(f"classifier: {len(res.traces['ce'])} iterations on {len(ds.classes)} classes")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    cfg = build_config(args)
    test = _data_path(args, "test", TEST_FILE)
    out = _out(args)
    write_manifest(out, argv, cfg, {"test": test, "classifier": args.classifier})
    n = args.n if args.n is not None else cfg.eval_n
    k = args.k if args.k is not None else cfg.eval_k
    m = args.m if args.m is not None else cfg.eval_m
    report = pipeline.evaluate(load_checkpoint(args.classifier), load_dataset(test), n, k, m, cfg.episodes, stream(cfg.seed, "evaluate"))
    report.config, report.seed = cfg.to_dict(), cfg.seed
    report.save(out / "report.json")
    report.save_episode_csv(out / "episodes.csv")
    print(f"{n}-way-{k}-shot accuracy {report.accuracy_mean:.2f} +/- {report.accuracy_std:.2f}")
    return EXIT_OK


def _fmi(art, gold) -> float | None:
    if gold is None or art.clusters is None:
        return None
    ids = [i for i, _ in art.features]
    return fowlkes_mallows(art.clusters.labels(ids).tolist(), [gold[i] for i in ids])


def _load_triplet(args):
    paths = {
        "source": _data_path(args, "source", SOURCE_FILE),
        "target": _data_path(args, "target", UNLABELED_FILE),
        "test": _data_path(args, "test", TEST_FILE),
    }
    return paths, [load_dataset(p) for p in paths.values()]


def cmd_run_all(args, argv) -> int:
    cfg = build_config(args)
    paths, (d_s, d_ut, d_test) = _load_triplet(args)
    out = _out(args)
    write_manifest(out, argv, cfg, {**paths, **({"gold": args.gold} if args.gold else {})})
    report, art = pipeline.run_all(d_s, d_ut, d_test, cfg, out)
    gold = _gold(args)
    if gold is not None and art.clusters is not None:
        report.fmi = _fmi(art, gold)
        report.save(out / "report.json")
    feats = None if art.features is None else np.array([f for _, f in art.features])
    ids = None if art.features is None else [i for i, _ in art.features]
    emit_plot_data({"run": report}, out / "plots", feats, ids, gold)
    line = f"{cfg.eval_n}-way-{cfg.eval_k}-shot accuracy {report.accuracy_mean:.2f} +/- {report.accuracy_std:.2f}"
    if report.dbi is not None:
        line += f", DBI {report.dbi:.4f}"
    if report.fmi is not None:
        line += f", FMI {report.fmi:.4f}"
    print(line)
    return EXIT_OK


ABLATION_COLUMNS = ["variant", "seed", "accuracy_mean", "accuracy_std", "dbi", "fmi"]


def cmd_ablate(args, argv) -> int:
    cfg = build_config(args)
    paths, (d_s, d_ut, d_test) = _load_triplet(args)
    out = _out(args)
    write_manifest(out, argv, cfg, paths)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    rows, reports, partitions = [], {}, []
    for name in args.variants or list(ABLATIONS):
        if name not in ABLATIONS:
            raise UsageError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        for seed in seeds:
            rep, art = pipeline.run_all(d_s, d_ut, d_test, replace(cfg, seed=seed, **ABLATIONS[name]))
            reports.setdefault(name, rep)
            partitions.append((rep, art))
            rows.append({
                "variant": name,
                "seed": seed,
                "accuracy_mean": rep.accuracy_mean,
                "accuracy_std": rep.accuracy_std,
                "dbi": rep.dbi,
            })
    gold = _gold(args)
    for row, (rep, art) in zip(rows, partitions):
        row["fmi"] = rep.fmi = _fmi(art, gold)
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in ABLATION_COLUMNS})
    summary = pipeline.summarize_ablation(rows)
    title = f"{cfg.eval_n}-way-{cfg.eval_k}-shot"
    print(f"{'model':<12} {title:>14}")
    for s in summary:
        print(f"{s['variant']:<12} {s['accuracy']:>14.2f}")
    emit_plot_data(reports, out / "plots")
    return EXIT_OK


def cmd_plot_data(args, argv) -> int:
    reports = {Path(p).parent.name or Path(p).stem: RunReport.load(p) for p in args.reports}
    feats = ids = None
    if args.features:
        pairs = _load_features(args.features)
        ids, feats = [i for i, _ in pairs], np.array([f for _, f in pairs])
    paths = emit_plot_data(reports, args.out, feats, ids, _gold(args))
    print("\n".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    return main(doc["command"])


# -- parser -----------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--preset", choices=("desk", "full"), default="desk", help="base settings before config and flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="run")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--eval-n", type=int)
    p.add_argument("--eval-k", type=int)
    p.add_argument("--eval-m", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--anneal", choices=("cosine", "linear", "constant"))
    p.add_argument("--anneal-T", dest="anneal_T", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--no-pseudo", action="store_true")
    p.add_argument("--no-cpm-s", action="store_true")
    p.add_argument("--no-cpm-a", action="store_true")
    p.add_argument("--no-cpm-c", action="store_true")
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--entropy-sign", choices=("as_written", "negated"))
    p.add_argument("--eq9-literal", action="store_true", help="audit mode: cosine schedule with its printed sign")
    p.add_argument("--data", help="directory holding the generated dataset files")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--test")
    p.add_argument("--gold", help="hidden label sidecar, read only for reporting FMI")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="dafec", description="Domain-adaptive few-shot classification via clustering.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("generate", parents=[common], help="write a synthetic two-domain benchmark").set_defaults(fn=cmd_generate)
    sub.add_parser("train-extractor", parents=[common], help="stage 1").set_defaults(fn=cmd_train_extractor)
    p = sub.add_parser("extract", parents=[common], help="stage 2")
    p.add_argument("--extractor", required=True)
    p.set_defaults(fn=cmd_extract)
    p = sub.add_parser("mine", parents=[common], help="stage 3")
    p.add_argument("--features", required=True)
    p.set_defaults(fn=cmd_mine)
    p = sub.add_parser("train-classifier", parents=[common], help="stage 4")
    p.add_argument("--pseudo", help="pseudo-labeled dataset from `mine`")
    p.add_argument("--clusters-file", help="cluster dump; combined with --target")
    p.add_argument("--extractor", help="stage-1 checkpoint used with --warm-start")
    p.set_defaults(fn=cmd_train_classifier)
    p = sub.add_parser("evaluate", parents=[common], help="few-shot accuracy on the labeled target test set")
    p.add_argument("--classifier", required=True)
    p.set_defaults(fn=cmd_evaluate)
    sub.add_parser("run-all", parents=[common], help="stages 1-4 then evaluation").set_defaults(fn=cmd_run_all)
    p = sub.add_parser("ablate", parents=[common], help="ablation grid over seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds starting at --seed")
    p.add_argument("--variants", nargs="+", help=f"subset of: {', '.join(ABLATIONS)}")
    p.set_defaults(fn=cmd_ablate)
    p = sub.add_parser("plot-data", parents=[common], help="CSV plot files from saved reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--features", help="feature dump for the PCA scatter")
    p.set_defaults(fn=cmd_plot_data)
    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
        return args.fn(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DafecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
