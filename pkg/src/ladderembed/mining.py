"""Balanced online batch sampling and exhaustive in-batch triplet enumeration.

No hard-triplet mining is done: every triplet formed inside a batch is used
and the hinge alone decides which ones contribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import EmptyCombination
from .losses import LossComponent, agreement, level_mask
from .rng import RngState


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int = 32
    # tuples of label values; empty means every combination present in TRAIN
    allowed_combinations: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        combos = tuple(tuple(int(v) for v in c) for c in self.allowed_combinations)
        object.__setattr__(self, "allowed_combinations", combos)
        if combos and self.batch_size % len(combos):
            raise ValueError(f"batch_size {self.batch_size} is not divisible by "
                             f"{len(combos)} allowed combinations")


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray  # rows of the dataset
    labels: np.ndarray  # (n, K)

    def __len__(self) -> int:
        return len(self.indices)


def train_combinations(dataset: Dataset) -> list[tuple[int, ...]]:
    rows = dataset.labels[dataset.is_train]
    return sorted({tuple(int(v) for v in r) for r in rows})


def resolve_combinations(dataset: Dataset, spec: BatchSpec) -> list[tuple[int, ...]]:
    combos = list(spec.allowed_combinations) or train_combinations(dataset)
    if not combos:
        raise EmptyCombination("dataset has no TRAIN trials")
    if spec.batch_size % len(combos):
        raise ValueError(f"batch_size {spec.batch_size} is not divisible by the "
                         f"{len(combos)} label combinations present in TRAIN")
    return sorted(combos)


def combination_pools(dataset: Dataset, combos) -> list[np.ndarray]:
    train = dataset.is_train
    pools = []
    for combo in combos:
        if len(combo) != dataset.n_labels:
            raise ValueError(f"combination {combo} does not have {dataset.n_labels} labels")
        hit = train & np.all(dataset.labels == np.asarray(combo), axis=1)
        idx = np.flatnonzero(hit)
        if len(idx) == 0:
            raise EmptyCombination(f"no TRAIN trials with labels {combo}")
        pools.append(idx)
    return pools


def sample_batch(dataset: Dataset, spec: BatchSpec, state: RngState,
                 pools: list[np.ndarray] | None = None) -> tuple[Batch, RngState]:
    """Draw batch_size / |combinations| TRAIN trials from each label combination.

    Within a combination the draw is without replacement when the pool is
    large enough and with replacement otherwise. ``pools`` may be passed to
    skip recomputing combination membership in a training loop.
    """
    if pools is None:
        pools = combination_pools(dataset, resolve_combinations(dataset, spec))
    quota = spec.batch_size // len(pools)
    chosen = []
    for pool in pools:
        if len(pool) >= quota:
            u, state = state.uniform(len(pool))
            pick = pool[np.argsort(u, kind="stable")[:quota]]
        else:
            j, state = state.integers(len(pool), quota)
            pick = pool[j]
        chosen.append(pick)
    indices = np.concatenate(chosen)
    return Batch(indices, dataset.labels[indices]), state


def enumerate_component_triplets(batch_labels, component: LossComponent) -> np.ndarray:
    """All (a, p, n) with p at the component's positive level and n at its negative level, ascending."""
    agree = agreement(batch_labels)
    pos = level_mask(agree, component.pos_level)
    neg = level_mask(agree, component.neg_level)
    mask = pos[:, :, None] & neg[:, None, :]
    return np.argwhere(mask).astype(np.int64).reshape(-1, 3)
