"""Command-line entry point: ``ladderembed {synth,train,eval,curve,stats,embed}``.

Exit status: 0 on success, 1 on usage/config errors, 2 on data or format errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classify, dataio, embedder, scenarios, stats
from .config import RunConfig, keys_help
from .errors import AllZeroDifferences, ConfigError, FormatError, LadderEmbedError, ShapeMismatch


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key, value)
    cwd = Path.cwd()
    for key in ("data", "ckpt", "out"):
        flag = getattr(args, key, None)
        if flag:
            cfg.values[key] = str((cwd / flag).resolve())
    if getattr(args, "jobs", None):
        cfg.values["jobs"] = args.jobs
    return cfg


def _require(cfg: RunConfig, key: str) -> Path:
    if not cfg[key]:
        raise ConfigError(f"missing required {key!r} (set it in the config or pass --{key})")
    return Path(cfg[key])


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def cmd_synth(cfg: RunConfig) -> None:
    out = _require(cfg, "out")
    dataio.save_dataset(dataio.generate_synthetic(cfg.synthetic_spec()), out)
    print(f"wrote dataset to {out}")


def cmd_train(cfg: RunConfig) -> None:
    """Train one embedder on every TRAIN trial of the dataset."""
    data = dataio.load_dataset(_require(cfg, "data"))
    out = _require(cfg, "out")
    prepared, scale = dataio.preprocess(data, cfg["per_channel_baseline"])
    spec = cfg.train_spec(data.trial_shape)
    spec = replace(spec, batch_spec=scenarios._batch_spec_for(prepared.subset(prepared.is_train), spec.batch_spec))
    params, trace = embedder.train_embedder(prepared, spec)
    embedder.save_checkpoint(out, spec.architecture, params, scale)
    sched = spec.schedule()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "lr", "loss"])
    for i, loss in enumerate(trace):
        w.writerow([i, repr(embedder.onecycle_lr(sched, i)), repr(loss)])
    _write(out / "loss_trace.csv", buf.getvalue())
    print(f"wrote checkpoint to {out}; final loss {trace[-1]:.6g}")


def _checkpoint_runs(cfg: RunConfig, data: dataio.Dataset):
    arch, params, scale = embedder.load_checkpoint(_require(cfg, "ckpt"))
    if arch.input_shape != data.trial_shape:
        raise ShapeMismatch(f"checkpoint expects {arch.input_shape}, dataset has {data.trial_shape}")
    digest = scenarios.checkpoint_digest(arch, params)
    runs = {int(s): scenarios.EmbedderRun(int(s), params, scale, (), digest) for s in np.unique(data.subjects)}
    return arch, runs


def _specs_and_runs(cfg: RunConfig, data: dataio.Dataset):
    base = cfg.scenario_spec(data.trial_shape)
    if cfg["ckpt"]:
        arch, runs = _checkpoint_runs(cfg, data)
        base = replace(base, train=replace(base.train, architecture=arch))
    else:
        runs = None
    return base, runs


def cmd_eval(cfg: RunConfig) -> None:
    data = dataio.load_dataset(_require(cfg, "data"))
    out = _require(cfg, "out")
    base, runs = _specs_and_runs(cfg, data)
    if runs is None:
        train_spec = base if base.scenario != scenarios.WITHIN_SUBJECT else replace(base, config_name="a")
        runs = scenarios.train_embedders(data, train_spec, jobs=cfg["jobs"])
    m = cfg["samples_per_class"] or None
    all_scores = []
    for clf in cfg.classifiers():
        spec = replace(base, classifier=clf)
        all_scores += scenarios.run_scenario(data, spec, m, embedders=runs)
    digests = {str(s): r.digest for s, r in sorted(runs.items())}
    _write(out / "scores.csv", scenarios.scores_to_csv(all_scores))
    _write(out / "scores.json", scenarios.scores_to_json(all_scores, {"checkpoint_digests": digests}))
    mean = np.mean([s.accuracy for s in all_scores])
    print(f"wrote {len(all_scores)} subject scores to {out}; mean accuracy {mean:.4f}")


def cmd_curve(cfg: RunConfig) -> None:
    data = dataio.load_dataset(_require(cfg, "data"))
    out = _require(cfg, "out")
    base, runs = _specs_and_runs(cfg, data)
    base = replace(base, scenario=scenarios.PARTIAL_LOSO)
    if runs is None:
        runs = scenarios.train_embedders(data, base, jobs=cfg["jobs"])
    rows, doc = [], {}
    for clf in cfg.classifiers():
        points = scenarios.few_shot_curve(data, replace(base, classifier=clf), cfg["m_values"], embedders=runs)
        doc[clf] = [{"m": p.m, "mean_accuracy": p.mean_accuracy, "standard_error": p.standard_error,
                     "accuracies": list(p.accuracies)} for p in points]
        rows.append((clf, points))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["classifier", "m", "mean_accuracy", "standard_error", "n_subjects"])
    for clf, points in rows:
        for p in points:
            w.writerow([clf, p.m, repr(p.mean_accuracy), repr(p.standard_error), len(p.accuracies)])
    _write(out / "curve.csv", buf.getvalue())
    _write(out / "curve.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote curve to {out}")


def _pipelines(rows):
    groups: dict[tuple, dict[int, float]] = {}
    for r in rows:
        key = (r["scenario"], r["config"], r["classifier"], r["m"])
        groups.setdefault(key, {})[r["subject"]] = r["accuracy"]
    return groups


def compare_score_tables(rows_a, rows_b, alpha: float = 0.05) -> dict:
    """Paired Wilcoxon tests between pipelines of two score tables, Holm-corrected.

    Pipelines (scenario, config, classifier, m) are paired in sorted order when
    both tables hold the same number; a single pipeline on one side is compared
    with every pipeline on the other. Scores are paired by subject.
    """
    ga, gb = _pipelines(rows_a), _pipelines(rows_b)
    ka, kb = sorted(ga, key=str), sorted(gb, key=str)
    if len(ka) == len(kb):
        pairs = list(zip(ka, kb))
    elif len(ka) == 1:
        pairs = [(ka[0], k) for k in kb]
    elif len(kb) == 1:
        pairs = [(k, kb[0]) for k in ka]
    else:
        raise ValueError(f"cannot pair {len(ka)} pipelines with {len(kb)}")
    tests = []
    for a, b in pairs:
        subjects = sorted(set(ga[a]) & set(gb[b]))
        entry = {"a": list(a), "b": list(b), "subjects": subjects}
        try:
            res = stats.wilcoxon_signed_rank([ga[a][s] for s in subjects], [gb[b][s] for s in subjects])
            entry.update(res.to_dict())
        except AllZeroDifferences as exc:
            entry.update({"p_value": "not-applicable", "diagnostic": str(exc), "rejected": False})
        tests.append(entry)
    testable = [i for i, t in enumerate(tests) if isinstance(t["p_value"], float)]
    decisions = stats.holm_bonferroni([tests[i]["p_value"] for i in testable], alpha)
    for i, d in zip(testable, decisions):
        tests[i]["rejected"] = d
    return {"alpha": alpha, "correction": "holm-bonferroni", "tests": tests}


def cmd_stats(args) -> None:
    if len(args.scores) != 2:
        raise UsageError("stats needs exactly two --scores files")
    tables = []
    for p in args.scores:
        try:
            text = Path(p).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FormatError("file not found", path=p) from None
        try:
            tables.append(scenarios.read_scores_csv(text))
        except ValueError as exc:
            raise FormatError(str(exc), path=p) from None
    report = compare_score_tables(tables[0], tables[1], args.alpha)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(Path(args.out), text)
    sys.stdout.write(text)


def cmd_embed(cfg: RunConfig, project: str | None) -> None:
    data = dataio.load_dataset(_require(cfg, "data"))
    out = _require(cfg, "out")
    arch, params, scale = embedder.load_checkpoint(_require(cfg, "ckpt"))
    corrected = dataio.baseline_correct_dataset(data, cfg["per_channel_baseline"])
    Z = embedder.embed_dataset(arch, params, replace(corrected, samples=corrected.samples / scale))
    proj = classify.pca_project(Z, 2) if project == "pca2" else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["trial_id"] + [f"e{j}" for j in range(Z.shape[1])]
    if proj is not None:
        header += [f"pca{j + 1}" for j in range(proj.shape[1])]
    w.writerow(header + list(data.label_names) + ["split"])
    for i in range(len(data)):
        row = [int(data.trial_ids[i])] + [repr(float(v)) for v in Z[i]]
        if proj is not None:
            row += [repr(float(v)) for v in proj[i]]
        w.writerow(row + [int(v) for v in data.labels[i]] + [data.split[i]])
    _write(out, buf.getvalue())
    print(f"wrote {len(data)} embeddings to {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ladderembed", description="Train and evaluate metric-learning embeddings of multichannel trials.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *flags):
        p.add_argument("config", nargs="?", help="run config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        for flag in flags:
            p.add_argument(f"--{flag}", help=f"{flag} path (overrides the config)")
        return p

    fmt = argparse.RawDescriptionHelpFormatter
    common(sub.add_parser("synth", help="generate a synthetic dataset", epilog=keys_help(), formatter_class=fmt), "out")
    common(sub.add_parser("train", help="train one embedder on all TRAIN trials", epilog=keys_help(), formatter_class=fmt),
           "data", "out")
    p = common(sub.add_parser("eval", help="score a scenario per subject", epilog=keys_help(), formatter_class=fmt),
               "data", "ckpt", "out")
    p.add_argument("--jobs", type=int, help="parallel per-subject workers")
    p = common(sub.add_parser("curve", help="partial-LOSO accuracy vs calibration size", epilog=keys_help(),
                              formatter_class=fmt), "data", "ckpt", "out")
    p.add_argument("--jobs", type=int, help="parallel per-subject workers")
    p = sub.add_parser("stats", help="paired Wilcoxon + Holm between two score tables")
    p.add_argument("--scores", action="append", required=True, help="scores.csv (give twice)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="also write the JSON report here")
    p = common(sub.add_parser("embed", help="export embeddings as CSV", epilog=keys_help(), formatter_class=fmt),
               "data", "ckpt", "out")
    p.add_argument("--project", choices=["pca2"], help="append a 2-D PCA projection")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "stats":
            cmd_stats(args)
            return 0
        cfg = _load_config(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "curve":
            cmd_curve(cfg)
        elif args.command == "embed":
            cmd_embed(cfg, args.project)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LadderEmbedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
