"""Trials, labelled datasets, preprocessing, on-disk container and a synthetic generator."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng
from .errors import DegenerateData, FormatError, ShapeMismatch

TRAIN = "train"
TEST = "test"
DEFAULT_LABEL_NAMES = ("subject", "im_class")
SUBJECT = 0
IM_CLASS = 1

MANIFEST = "manifest.csv"
SAMPLES = "samples.bin"
META = "meta.csv"
_META_HEADER = ["time_steps", "channels", "n_labels", "label_names", "label_cardinalities"]
_FLOAT = np.dtype("<f4")


@dataclass(frozen=True)
class Trial:
    samples: np.ndarray  # (time_steps, channels)
    trial_id: int = 0
    order_index: int = 0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeMismatch(f"trial must be a non-empty time x channels matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("trial samples must be finite")
        object.__setattr__(self, "samples", x)

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape


@dataclass(eq=False)
class Dataset:
    """Parallel arrays over N trials.

    ``samples`` has shape (N, time_steps, channels); ``labels`` has shape
    (N, K) with column 0 the subject and column 1 the imagery class when the
    default label names are used.
    """

    samples: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    trial_ids: np.ndarray
    order_index: np.ndarray
    label_names: tuple[str, ...] = DEFAULT_LABEL_NAMES
    label_cardinalities: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim == 1:
            self.labels = self.labels[:, None]
        self.split = np.asarray(self.split, dtype="<U5")
        self.trial_ids = np.asarray(self.trial_ids, dtype=np.int64)
        self.order_index = np.asarray(self.order_index, dtype=np.int64)
        self.label_names = tuple(self.label_names)
        if not self.label_cardinalities:
            self.label_cardinalities = tuple(int(c) + 1 for c in self.labels.max(axis=0))
        self.label_cardinalities = tuple(int(c) for c in self.label_cardinalities)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and np.array_equal(self.trial_ids, other.trial_ids)
            and np.array_equal(self.order_index, other.order_index)
            and self.label_names == other.label_names
            and self.label_cardinalities == other.label_cardinalities
        )

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def trial_shape(self) -> tuple[int, int]:
        return self.samples.shape[1], self.samples.shape[2]

    @property
    def subjects(self) -> np.ndarray:
        return self.labels[:, SUBJECT]

    @property
    def classes(self) -> np.ndarray:
        return self.labels[:, IM_CLASS]

    @property
    def is_train(self) -> np.ndarray:
        return self.split == TRAIN

    def trial(self, i: int) -> Trial:
        return Trial(self.samples[i], int(self.trial_ids[i]), int(self.order_index[i]))

    def subset(self, mask_or_index) -> "Dataset":
        """Rows selected by a boolean mask or an index array; metadata kept."""
        sel = np.asarray(mask_or_index)
        return replace(
            self,
            samples=self.samples[sel],
            labels=self.labels[sel],
            split=self.split[sel],
            trial_ids=self.trial_ids[sel],
            order_index=self.order_index[sel],
        )

    def validate(self) -> "Dataset":
        n = len(self)
        if n < 1:
            raise DegenerateData("dataset is empty")
        if self.samples.ndim != 3 or min(self.samples.shape[1:]) < 1:
            raise ShapeMismatch(f"samples must be (N, time_steps, channels), got {self.samples.shape}")
        for name, arr in (("labels", self.labels), ("split", self.split),
                          ("trial_ids", self.trial_ids), ("order_index", self.order_index)):
            if arr.shape[0] != n:
                raise ShapeMismatch(f"{name} has length {arr.shape[0]}, expected {n}")
        k = self.labels.shape[1]
        if len(self.label_names) != k or len(self.label_cardinalities) != k:
            raise ShapeMismatch("label_names/label_cardinalities length must equal the number of labels")
        if not np.all(np.isfinite(self.samples)):
            raise DegenerateData("samples contain non-finite values")
        if np.any(self.labels < 0) or np.any(self.labels >= np.asarray(self.label_cardinalities)):
            raise ValueError("label value outside declared cardinality")
        if not np.all(np.isin(self.split, (TRAIN, TEST))):
            raise ValueError("split markers must be 'train' or 'test'")
        if len(np.unique(self.trial_ids)) != n:
            raise ValueError("trial_ids are not unique")
        if np.any(self.trial_ids < 0) or np.any(self.order_index < 0):
            raise ValueError("trial_id and order_index must be non-negative")
        if self.label_names[SUBJECT] == "subject":
            for s in np.unique(self.subjects):
                here = self.split[self.subjects == s]
                for part in (TRAIN, TEST):
                    if not np.any(here == part):
                        raise DegenerateData(f"subject {s} has no {part.upper()} trials")
        return self


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int = 2
    n_classes: int = 2
    trials_per_cell_train: int = 10
    trials_per_cell_test: int = 5
    time_steps: int = 32
    channels: int = 4
    class_separation: float = 2.0
    subject_separation: float = 2.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_classes", "trials_per_cell_train", "trials_per_cell_test",
                     "time_steps", "channels"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("class_separation", "subject_separation", "noise_sd"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


# Template streams are keyed independently of the noise seed.
_SUBJECT_TEMPLATE = 0x5B1EC7
_CLASS_TEMPLATE = 0xC1A55
_NOISE = 0x0015E


def unit_template(kind: int, index: int, shape: tuple[int, int]) -> np.ndarray:
    """Gaussian matrix with unit Frobenius norm, a pure function of (kind, index, shape)."""
    size = shape[0] * shape[1]
    g = rng.normals(rng.derive_key(kind, index, shape[0], shape[1]), 0, size)
    return (g / np.linalg.norm(g)).reshape(shape)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Per subject: all TRAIN trials (classes interleaved), then all TEST trials.

    Cell mean is ``subject_separation * u_s + class_separation * v_c``; each
    trial adds i.i.d. Gaussian noise. Samples are rounded to float32.
    """
    shape = (spec.time_steps, spec.channels)
    size = shape[0] * shape[1]
    class_means = [spec.class_separation * unit_template(_CLASS_TEMPLATE, c, shape)
                   for c in range(spec.n_classes)]
    per_subject = spec.n_classes * (spec.trials_per_cell_train + spec.trials_per_cell_test)

    samples, labels, split, order = [], [], [], []
    for s in range(spec.n_subjects):
        offset = spec.subject_separation * unit_template(_SUBJECT_TEMPLATE, s, shape)
        noise = rng.normals(rng.derive_key(spec.seed, _NOISE, s), 0, per_subject * size)
        noise = spec.noise_sd * noise.reshape(per_subject, *shape)
        j = 0
        for part, reps in ((TRAIN, spec.trials_per_cell_train), (TEST, spec.trials_per_cell_test)):
            for _ in range(reps):
                for c in range(spec.n_classes):
                    samples.append(offset + class_means[c] + noise[j])
                    labels.append((s, c))
                    split.append(part)
                    order.append(j)
                    j += 1
    x = np.stack(samples).astype(np.float32).astype(np.float64)
    return Dataset(
        samples=x,
        labels=np.array(labels, dtype=np.int64),
        split=np.array(split),
        trial_ids=np.arange(len(samples)),
        order_index=np.array(order),
        label_names=DEFAULT_LABEL_NAMES,
        label_cardinalities=(spec.n_subjects, spec.n_classes),
    ).validate()


def baseline_correct(trial: Trial, per_channel: bool = False) -> Trial:
    """Remove the trial average (whole matrix, or each channel separately)."""
    x = trial.samples
    mean = x.mean(axis=0, keepdims=True) if per_channel else x.mean()
    return Trial(x - mean, trial.trial_id, trial.order_index)


def baseline_correct_dataset(dataset: Dataset, per_channel: bool = False) -> Dataset:
    x = dataset.samples
    axes = (1,) if per_channel else (1, 2)
    return replace(dataset, samples=x - x.mean(axis=axes, keepdims=True))


def standardize(dataset: Dataset) -> tuple[Dataset, float]:
    """Divide every trial by the population sd of all TRAIN samples."""
    train = dataset.samples[dataset.is_train]
    if train.size == 0:
        raise DegenerateData("no TRAIN samples to standardize with")
    scale = float(train.std())
    if scale < 1e-12:
        raise DegenerateData(f"TRAIN standard deviation {scale:g} is below 1e-12")
    return replace(dataset, samples=dataset.samples / scale), scale


def preprocess(dataset: Dataset, per_channel: bool = False) -> tuple[Dataset, float]:
    return standardize(baseline_correct_dataset(dataset, per_channel))


# --- container -----------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    dataset.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    t, c = dataset.trial_shape
    nbytes = t * c * _FLOAT.itemsize
    blob = np.ascontiguousarray(dataset.samples, dtype=_FLOAT)
    if not np.array_equal(blob.astype(np.float64), dataset.samples):
        raise ValueError("samples are not exactly representable as float32")
    (path / SAMPLES).write_bytes(blob.tobytes())

    with open(path / MANIFEST, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_id", *dataset.label_names, "split", "order_index", "offset"])
        for i in range(len(dataset)):
            w.writerow([int(dataset.trial_ids[i]), *(int(v) for v in dataset.labels[i]),
                        dataset.split[i], int(dataset.order_index[i]), i * nbytes])

    with open(path / META, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_META_HEADER)
        w.writerow([t, c, dataset.n_labels, ";".join(dataset.label_names),
                    ";".join(str(k) for k in dataset.label_cardinalities)])


def _read_csv(path: Path) -> list[list[str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError("file not found", path=path) from None
    except UnicodeDecodeError as exc:
        raise FormatError(f"not valid UTF-8 ({exc.reason})", path=path, offset=exc.start) from None
    return list(csv.reader(io.StringIO(text)))


def _int(value: str, path: Path, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"column {column!r}: expected integer, got {value!r}", path=path, line=line) from None


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path, manifest_path = path / META, path / MANIFEST

    meta = _read_csv(meta_path)
    if len(meta) != 2 or meta[0] != _META_HEADER:
        raise FormatError(f"expected header {','.join(_META_HEADER)} and one value row", path=meta_path, line=1)
    row = meta[1]
    if len(row) != len(_META_HEADER):
        raise FormatError(f"expected {len(_META_HEADER)} fields", path=meta_path, line=2)
    t = _int(row[0], meta_path, 2, "time_steps")
    c = _int(row[1], meta_path, 2, "channels")
    k = _int(row[2], meta_path, 2, "n_labels")
    names = tuple(row[3].split(";"))
    cards = tuple(_int(v, meta_path, 2, "label_cardinalities") for v in row[4].split(";"))
    if t < 1 or c < 1 or k < 1 or len(names) != k or len(cards) != k or min(cards) < 1:
        raise FormatError("inconsistent time_steps/channels/n_labels/label fields", path=meta_path, line=2)

    rows = _read_csv(manifest_path)
    header = ["trial_id", *names, "split", "order_index", "offset"]
    if not rows or rows[0] != header:
        raise FormatError(f"expected header {','.join(header)}", path=manifest_path, line=1)
    blob = (path / SAMPLES).read_bytes() if (path / SAMPLES).exists() else None
    if blob is None:
        raise FormatError("file not found", path=path / SAMPLES)
    nbytes = t * c * _FLOAT.itemsize
    n = len(rows) - 1
    if n < 1:
        raise FormatError("manifest has no trials", path=manifest_path, line=2)
    if len(blob) != n * nbytes:
        raise ShapeMismatch(
            f"{path / SAMPLES}: {len(blob)} bytes, expected {n} trials x {t}x{c} float32 = {n * nbytes}")

    ids, labels, split, order = [], [], [], []
    samples = np.empty((n, t, c), dtype=np.float64)
    seen = set()
    for line, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(r)}", path=manifest_path, line=line)
        tid = _int(r[0], manifest_path, line, "trial_id")
        if tid in seen:
            raise FormatError(f"duplicate trial_id {tid}", path=manifest_path, line=line)
        seen.add(tid)
        lab = [_int(v, manifest_path, line, nm) for v, nm in zip(r[1:1 + k], names)]
        for v, card, nm in zip(lab, cards, names):
            if not 0 <= v < card:
                raise FormatError(f"{nm}={v} outside cardinality {card}", path=manifest_path, line=line)
        sp = r[1 + k]
        if sp not in (TRAIN, TEST):
            raise FormatError(f"split must be train or test, got {sp!r}", path=manifest_path, line=line)
        oi = _int(r[2 + k], manifest_path, line, "order_index")
        off = _int(r[3 + k], manifest_path, line, "offset")
        if off < 0 or off + nbytes > len(blob):
            raise ShapeMismatch(f"{manifest_path}: line {line}: offset {off} + {nbytes} bytes exceeds blob size {len(blob)}")
        samples[line - 2] = np.frombuffer(blob, dtype=_FLOAT, count=t * c, offset=off).reshape(t, c)
        ids.append(tid)
        labels.append(lab)
        split.append(sp)
        order.append(oi)

    if not np.all(np.isfinite(samples)):
        raise FormatError("samples contain non-finite values", path=path / SAMPLES)
    return Dataset(samples, np.array(labels, dtype=np.int64), np.array(split), np.array(ids),
                   np.array(order), names, cards).validate()


def shuffle_classes(dataset: Dataset, seed: int) -> Dataset:
    """Randomly permute im_class labels within each (subject, split) group.

    Class balance per group is preserved while any link between samples and
    class labels is destroyed.
    """
    labels = dataset.labels.copy()
    for g, (s, part) in enumerate(sorted({(int(s), str(p)) for s, p in zip(dataset.subjects, dataset.split)})):
        rows = np.flatnonzero((dataset.subjects == s) & (dataset.split == part))
        u = rng.uniforms(rng.derive_key(seed, 0x5F1E, g), 0, len(rows))
        labels[rows, IM_CLASS] = labels[rows[np.argsort(u, kind="stable")], IM_CLASS]
    return replace(dataset, labels=labels)
