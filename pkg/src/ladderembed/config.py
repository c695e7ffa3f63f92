"""Flat ``key = value`` run configs.

Lines starting with ``#`` are comments. ``component = margin,weight,pos,neg``
may be repeated to build a custom loss configuration; otherwise
``loss_config`` names a built-in one. Path-valued keys are resolved against
the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .dataio import SyntheticSpec
from .embedder import ArchitectureSpec, TrainSpec
from .errors import ConfigError
from .losses import DEFAULT_MARGIN, LossComponent, LossConfig, builtin_config
from .mining import BatchSpec
from .scenarios import ScenarioSpec


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _combos(text: str) -> tuple[tuple[int, ...], ...]:
    # "0:1;0:2" -> ((0, 1), (0, 2))
    return tuple(tuple(int(v) for v in part.split(":")) for part in text.split(";") if part.strip())


def _path(text: str) -> str:
    return text.strip()


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    # synthetic data
    "n_subjects": (int, 2, "number of subjects"),
    "n_classes": (int, 4, "number of imagery classes"),
    "trials_per_cell_train": (int, 10, "TRAIN trials per (subject, class)"),
    "trials_per_cell_test": (int, 5, "TEST trials per (subject, class)"),
    "time_steps": (int, 32, "samples per trial"),
    "channels": (int, 4, "channels per trial"),
    "class_separation": (float, 3.0, "norm of the class template"),
    "subject_separation": (float, 3.0, "norm of the subject template"),
    "noise_sd": (float, 1.0, "per-sample Gaussian noise sd"),
    "seed": (int, 0, "seed for data, initialisation and batches"),
    # architecture
    "arch": (str, "linear", "linear or miniconv"),
    "embed_dim": (int, 8, "embedding dimension"),
    "f1": (int, 8, "miniconv temporal filters"),
    "depth_mult": (int, 2, "miniconv spatial filters per temporal filter"),
    "f2": (int, 16, "miniconv pointwise filters"),
    "temporal_kernel": (int, 32, "miniconv temporal kernel length"),
    "sep_kernel": (int, 16, "miniconv separable kernel length"),
    "pool1": (int, 4, "miniconv first pooling factor"),
    "pool2": (int, 8, "miniconv second pooling factor"),
    # training
    "loss_config": (str, "b", "built-in loss configuration a, b, c or d (ignored if component lines exist)"),
    "margin": (float, DEFAULT_MARGIN, "margin for built-in configurations"),
    "steps": (int, 1000, "training iterations"),
    "batch_size": (int, 32, "batch size (rounded to a multiple of the label combinations in scenarios)"),
    "allowed_combinations": (_combos, (), "label tuples to sample from, e.g. 0:1;1:1 (empty = all)"),
    "max_lr": (float, 1e-3, "1cycle peak learning rate"),
    "pct_start": (float, 0.3, "1cycle warm-up fraction"),
    "div": (float, 25.0, "1cycle initial divisor"),
    "final_div": (float, 1e4, "1cycle final divisor"),
    "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    "reduction": (str, "sum", "sum or mean (per active triplet)"),
    # evaluation
    "scenario": (str, "complete_loso", "within_subject, complete_loso or partial_loso"),
    "classifier": (str, "logreg", "logreg, 1nn or a comma list of both"),
    "C": (float, 1.0, "logistic regression inverse L2 strength"),
    "max_iter": (int, 100, "logistic regression iterations"),
    "per_channel_baseline": (_bool, False, "remove the mean per channel instead of per trial"),
    "samples_per_class": (int, 0, "partial LOSO calibration trials per class (0 = all)"),
    "m_values": (_int_list, (1, 2, 5, 10), "calibration sizes for the curve"),
    "jobs": (int, 1, "parallel per-subject workers"),
    # paths
    "data": (_path, None, "dataset directory"),
    "ckpt": (_path, None, "checkpoint directory"),
    "out": (_path, None, "output location"),
}
PATH_KEYS = ("data", "ckpt", "out")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    components: list[LossComponent] = field(default_factory=list)
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return KEYS[key][1]

    def set(self, key: str, raw: str, line: int | None = None) -> None:
        where = f" (line {line})" if line is not None else ""
        key = key.strip()
        if key == "component":
            try:
                self.components.append(LossComponent.parse(raw))
            except ValueError as exc:
                raise ConfigError(f"component{where}: {exc}") from None
            return
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}{where}")
        try:
            value = KEYS[key][0](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"key {key!r}{where}: cannot parse {raw.strip()!r} ({exc})") from None
        if key in PATH_KEYS and value:
            value = str((self.base_dir / value).resolve()) if not Path(value).is_absolute() else value
        self.values[key] = value

    @classmethod
    def parse(cls, text: str, base_dir=None) -> "RunConfig":
        cfg = cls(base_dir=Path(base_dir) if base_dir else Path.cwd())
        for line_no, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {line.strip()!r}")
            key, raw = stripped.split("=", 1)
            cfg.set(key, raw, line_no)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        return cls.parse(text, path.parent)

    # --- builders -------------------------------------------------------------------

    def synthetic_spec(self) -> SyntheticSpec:
        keys = ("n_subjects", "n_classes", "trials_per_cell_train", "trials_per_cell_test", "time_steps",
                "channels", "class_separation", "subject_separation", "noise_sd", "seed")
        try:
            return SyntheticSpec(**{k: self[k] for k in keys})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss_config(self) -> LossConfig:
        if self.components:
            return LossConfig(tuple(self.components))
        try:
            return builtin_config(self["loss_config"], self["margin"])
        except ValueError as exc:
            raise ConfigError(f"key 'loss_config': {exc}") from None

    def config_name(self) -> str:
        return "custom" if self.components else self["loss_config"]

    def architecture(self, input_shape) -> ArchitectureSpec:
        try:
            return ArchitectureSpec(
                kind=self["arch"], input_shape=tuple(input_shape), embed_dim=self["embed_dim"],
                f1=self["f1"], depth_mult=self["depth_mult"], f2=self["f2"],
                temporal_kernel=self["temporal_kernel"], sep_kernel=self["sep_kernel"],
                pool1=self["pool1"], pool2=self["pool2"])
        except ValueError as exc:
            raise ConfigError(f"architecture: {exc}") from None

    def train_spec(self, input_shape) -> TrainSpec:
        if self["reduction"] not in ("sum", "mean"):
            raise ConfigError(f"key 'reduction': expected sum or mean, got {self['reduction']!r}")
        try:
            return TrainSpec(
                loss_config=self.loss_config(),
                batch_spec=BatchSpec(self["batch_size"], self["allowed_combinations"]),
                steps=self["steps"], seed=self["seed"], architecture=self.architecture(input_shape),
                max_lr=self["max_lr"], pct_start=self["pct_start"], div=self["div"],
                final_div=self["final_div"], weight_decay=self["weight_decay"], reduction=self["reduction"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def classifiers(self) -> list[str]:
        names = [c.strip() for c in self["classifier"].split(",") if c.strip()]
        for c in names:
            if c not in ("logreg", "1nn"):
                raise ConfigError(f"key 'classifier': unknown classifier {c!r}")
        return names or ["logreg"]

    def scenario_spec(self, input_shape, classifier: str | None = None) -> ScenarioSpec:
        try:
            return ScenarioSpec(
                scenario=self["scenario"], train=self.train_spec(input_shape),
                classifier=classifier or self.classifiers()[0], config_name=self.config_name(),
                C=self["C"], max_iter=self["max_iter"], per_channel_baseline=self["per_channel_baseline"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def keys_help() -> str:
    lines = ["config keys (key = value; CLI --set key=value overrides the file):"]
    for key, (_, default, text) in KEYS.items():
        lines.append(f"  {key:<22} {text} [default: {default}]")
    lines.append("  component              margin,weight,pos_level,neg_level; repeatable, overrides loss_config")
    return "\n".join(lines)
