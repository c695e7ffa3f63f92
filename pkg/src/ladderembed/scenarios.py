"""Within-subject, complete LOSO and partial LOSO evaluation of trained embeddings.

Every embedder is trained on preprocessed TRAIN data only. Baseline
correction is per trial; the standardisation scale comes from the TRAIN trials
the embedder is trained on, so in both LOSO modes nothing of the held-out
subject reaches the embedder.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .classify import (ConfusionMatrix, confusion, fit_1nn, fit_logistic_regression,
                       predict_1nn, predict_logistic_regression)
from .dataio import TEST, TRAIN, Dataset, baseline_correct_dataset
from .embedder import Params, TrainSpec, embed_dataset, params_bytes, train_embedder
from .errors import DegenerateData, InsufficientCalibration
from .losses import builtin_config
from .mining import BatchSpec, train_combinations

WITHIN_SUBJECT = "within_subject"
COMPLETE_LOSO = "complete_loso"
PARTIAL_LOSO = "partial_loso"
SCENARIOS = (WITHIN_SUBJECT, COMPLETE_LOSO, PARTIAL_LOSO)
LOGREG = "logreg"
ONE_NN = "1nn"
CLASSIFIERS = (LOGREG, ONE_NN)

_SUBJECT_STREAM = 0x5CE7


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = COMPLETE_LOSO
    train: TrainSpec = field(default_factory=TrainSpec)
    classifier: str = LOGREG
    config_name: str = "b"
    C: float = 1.0
    max_iter: int = 100
    per_channel_baseline: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.classifier!r}; expected one of {CLASSIFIERS}")


@dataclass(frozen=True)
class SubjectScore:
    subject: int
    accuracy: float
    confusion: ConfusionMatrix
    n_calibration: int
    scenario: str = ""
    config: str = ""
    classifier: str = ""
    m: int | None = None


@dataclass(frozen=True)
class CurvePoint:
    m: int
    mean_accuracy: float
    standard_error: float
    accuracies: tuple[float, ...] = ()
    checkpoint_digests: tuple[str, ...] = ()


@dataclass(frozen=True)
class EmbedderRun:
    """An embedder trained for one target subject, plus its input scale."""

    subject: int
    params: Params
    scale: float
    loss_trace: tuple[float, ...]
    digest: str


def subject_seed(seed: int, subject: int) -> int:
    return rng.derive_key(seed, _SUBJECT_STREAM, subject)


def checkpoint_digest(arch, params: Params) -> str:
    """SHA-256 of the float32 checkpoint bytes."""
    return hashlib.sha256(params_bytes(arch, params)).hexdigest()


def _batch_spec_for(dataset: Dataset, base: BatchSpec) -> BatchSpec:
    # Keep the requested batch size as close as possible while staying divisible
    # by the number of label combinations, with at least two trials per combination.
    if base.allowed_combinations:
        return base
    n_combos = len(train_combinations(dataset))
    per = max(2, round(base.batch_size / n_combos))
    return BatchSpec(per * n_combos)


def _prepare(dataset: Dataset, source: np.ndarray, per_channel: bool) -> tuple[Dataset, float]:
    """Baseline-correct everything; scale by the sd of the source TRAIN samples."""
    corrected = baseline_correct_dataset(dataset, per_channel)
    ref = corrected.samples[source & corrected.is_train]
    if ref.size == 0:
        raise DegenerateData("no TRAIN trials to train the embedder on")
    scale = float(ref.std())
    if scale < 1e-12:
        raise DegenerateData(f"TRAIN standard deviation {scale:g} is below 1e-12")
    return replace(corrected, samples=corrected.samples / scale), scale


def _check_splits(dataset: Dataset, subjects) -> None:
    for s in subjects:
        here = dataset.split[dataset.subjects == s]
        for part in (TRAIN, TEST):
            if not np.any(here == part):
                raise DegenerateData(f"subject {s} has no {part.upper()} trials")


def _train_one(args) -> EmbedderRun:
    dataset, spec, subject, source = args
    prepared, scale = _prepare(dataset, source, spec.per_channel_baseline)
    train_view = prepared.subset(source & prepared.is_train)
    tspec = spec.train
    if spec.scenario == WITHIN_SUBJECT:
        tspec = replace(tspec, loss_config=builtin_config("a", tspec.loss_config.components[0].margin))
    tspec = replace(tspec, seed=subject_seed(tspec.seed, subject),
                    batch_spec=_batch_spec_for(train_view, tspec.batch_spec))
    params, trace = train_embedder(train_view, tspec)
    return EmbedderRun(subject, params, scale, tuple(trace), checkpoint_digest(tspec.architecture, params))


def _source_mask(dataset: Dataset, scenario: str, subject: int) -> np.ndarray:
    if scenario == WITHIN_SUBJECT:
        return dataset.subjects == subject
    return dataset.subjects != subject


def train_embedders(dataset: Dataset, spec: ScenarioSpec, subjects=None, jobs: int = 1) -> dict[int, EmbedderRun]:
    """One embedder per target subject, trained as the scenario prescribes."""
    all_subjects = [int(s) for s in np.unique(dataset.subjects)]
    subjects = all_subjects if subjects is None else [int(s) for s in subjects]
    if spec.scenario != WITHIN_SUBJECT and len(all_subjects) < 2:
        raise DegenerateData("leave-one-subject-out needs at least two subjects")
    _check_splits(dataset, subjects)
    tasks = [(dataset, spec, s, _source_mask(dataset, spec.scenario, s)) for s in subjects]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_train_one, tasks))
    else:
        runs = [_train_one(t) for t in tasks]
    return {r.subject: r for r in runs}


def _embed(dataset: Dataset, spec: ScenarioSpec, run: EmbedderRun) -> np.ndarray:
    corrected = baseline_correct_dataset(dataset, spec.per_channel_baseline)
    return embed_dataset(spec.train.architecture, run.params, replace(corrected, samples=corrected.samples / run.scale))


def first_per_class(dataset: Dataset, rows: np.ndarray, m: int | None) -> np.ndarray:
    """Of the given row indices, keep the m earliest (by order_index) of each class."""
    if m is None:
        return rows
    if m < 1:
        raise InsufficientCalibration("samples_per_class must be >= 1")
    keep = []
    for c in np.unique(dataset.classes[rows]):
        of_c = rows[dataset.classes[rows] == c]
        if len(of_c) < m:
            raise InsufficientCalibration(f"class {c} has {len(of_c)} calibration trials, {m} requested")
        keep.append(of_c[np.argsort(dataset.order_index[of_c], kind="stable")[:m]])
    return np.sort(np.concatenate(keep))


def _classify(spec: ScenarioSpec, Z_train, y_train, Z_test):
    if spec.classifier == LOGREG:
        model = fit_logistic_regression(Z_train, y_train, spec.C, spec.max_iter)
        return predict_logistic_regression(model, Z_test)
    return predict_1nn(fit_1nn(Z_train, y_train), Z_test)


def _score(dataset, spec, subject, Z, fit_rows, test_rows, m=None) -> SubjectScore:
    y = dataset.classes
    pred = _classify(spec, Z[fit_rows], y[fit_rows], Z[test_rows])
    classes = list(range(dataset.label_cardinalities[1]))
    cm = confusion(y[test_rows].tolist(), pred.tolist(), classes)
    return SubjectScore(subject, cm.accuracy, cm, len(fit_rows), spec.scenario, spec.config_name,
                        spec.classifier, m)


def _runs(dataset, spec, embedders, jobs):
    if embedders is None:
        embedders = train_embedders(dataset, spec, jobs=jobs)
    return embedders


def run_within_subject(dataset: Dataset, spec: ScenarioSpec, embedders=None, jobs: int = 1) -> list[SubjectScore]:
    spec = replace(spec, scenario=WITHIN_SUBJECT, config_name="a")
    runs = _runs(dataset, spec, embedders, jobs)
    scores = []
    for s, run in sorted(runs.items()):
        Z = _embed(dataset, spec, run)
        mine = dataset.subjects == s
        scores.append(_score(dataset, spec, s, Z, np.flatnonzero(mine & dataset.is_train),
                             np.flatnonzero(mine & ~dataset.is_train)))
    return scores


def run_complete_loso(dataset: Dataset, spec: ScenarioSpec, embedders=None, jobs: int = 1) -> list[SubjectScore]:
    """Classifier fit on the embedded TRAIN trials of the source subjects."""
    spec = replace(spec, scenario=COMPLETE_LOSO)
    runs = _runs(dataset, spec, embedders, jobs)
    scores = []
    for s, run in sorted(runs.items()):
        Z = _embed(dataset, spec, run)
        held = dataset.subjects == s
        scores.append(_score(dataset, spec, s, Z, np.flatnonzero(~held & dataset.is_train),
                             np.flatnonzero(held & ~dataset.is_train)))
    return scores


def run_partial_loso(dataset: Dataset, spec: ScenarioSpec, samples_per_class: int | None = None,
                     embedders=None, jobs: int = 1) -> list[SubjectScore]:
    """Classifier fit on the held-out subject's own (optionally truncated) embedded TRAIN trials."""
    spec = replace(spec, scenario=PARTIAL_LOSO)
    runs = _runs(dataset, spec, embedders, jobs)
    scores = []
    for s, run in sorted(runs.items()):
        Z = _embed(dataset, spec, run)
        held = dataset.subjects == s
        fit_rows = first_per_class(dataset, np.flatnonzero(held & dataset.is_train), samples_per_class)
        scores.append(_score(dataset, spec, s, Z, fit_rows, np.flatnonzero(held & ~dataset.is_train),
                             samples_per_class))
    return scores


def run_scenario(dataset: Dataset, spec: ScenarioSpec, samples_per_class=None, embedders=None, jobs: int = 1):
    if spec.scenario == WITHIN_SUBJECT:
        return run_within_subject(dataset, spec, embedders, jobs)
    if spec.scenario == COMPLETE_LOSO:
        return run_complete_loso(dataset, spec, embedders, jobs)
    return run_partial_loso(dataset, spec, samples_per_class, embedders, jobs)


def mean_and_se(values) -> tuple[float, float]:
    """Mean and standard error sd/sqrt(n) using the sample sd (ddof=1); SE is 0 for n=1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def few_shot_curve(dataset: Dataset, spec: ScenarioSpec, m_values, embedders=None, jobs: int = 1) -> list[CurvePoint]:
    """Partial-LOSO accuracy against calibration trials per class, one frozen embedder per subject."""
    m_values = [int(m) for m in m_values]
    if any(b <= a for a, b in zip(m_values, m_values[1:])):
        raise ValueError("m_values must be strictly ascending")
    spec = replace(spec, scenario=PARTIAL_LOSO)
    runs = _runs(dataset, spec, embedders, jobs)
    points = []
    for m in m_values:
        scores = run_partial_loso(dataset, spec, m, embedders=runs)
        acc = [sc.accuracy for sc in scores]
        mean, se = mean_and_se(acc)
        points.append(CurvePoint(m, mean, se, tuple(acc), tuple(runs[s].digest for s in sorted(runs))))
    return points


def per_class_train_counts(dataset: Dataset, subject: int) -> dict[int, int]:
    rows = (dataset.subjects == subject) & dataset.is_train
    values, counts = np.unique(dataset.classes[rows], return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


# --- result files -----------------------------------------------------------------------------

SCORE_HEADER = ["subject", "scenario", "config", "classifier", "m", "accuracy"]


def scores_to_csv(scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for s in scores:
        w.writerow([s.subject, s.scenario, s.config, s.classifier, "" if s.m is None else s.m, repr(s.accuracy)])
    return buf.getvalue()


def scores_to_json(scores, extra: dict | None = None) -> str:
    doc = {
        "scores": [
            {"subject": s.subject, "scenario": s.scenario, "config": s.config, "classifier": s.classifier,
             "m": s.m, "n_calibration": s.n_calibration, "accuracy": s.accuracy,
             "confusion": s.confusion.to_dict()}
            for s in scores
        ]
    }
    if scores:
        mean, se = mean_and_se([s.accuracy for s in scores])
        doc["mean_accuracy"], doc["standard_error"] = mean, se
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def curve_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "mean_accuracy", "standard_error", "n_subjects"])
    for p in points:
        w.writerow([p.m, repr(p.mean_accuracy), repr(p.standard_error), len(p.accuracies)])
    return buf.getvalue()


def read_scores_csv(text: str) -> list[dict]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != SCORE_HEADER:
        raise ValueError(f"expected header {','.join(SCORE_HEADER)}")
    out = []
    for line, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(SCORE_HEADER):
            raise ValueError(f"line {line}: expected {len(SCORE_HEADER)} fields")
        try:
            out.append({"subject": int(r[0]), "scenario": r[1], "config": r[2], "classifier": r[3],
                        "m": int(r[4]) if r[4] else None, "accuracy": float(r[5])})
        except ValueError as exc:
            raise ValueError(f"line {line}: {exc}") from None
    return out
