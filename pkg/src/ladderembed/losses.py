"""Euclidean triplet, ladder and product ladder losses.

Similarity levels are K-character strings over {'0', '1'}: character k is
'1' when two examples share their k-th label (subject first, imagery class
second). A loss component selects its positive and negative sets with a
level *pattern*, which may also contain '*' for "either value"; this is how
the class-only triplet loss is expressed on two-label data ("*1" vs "*0").
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch

DEFAULT_MARGIN = 0.2


def euclidean_distance(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape or v1.ndim != 1:
        raise ShapeMismatch(f"vectors must have equal length, got {v1.shape} and {v2.shape}")
    return float(np.sqrt(np.sum((v1 - v2) ** 2)))


def pairwise_distances(V) -> np.ndarray:
    """(n, n) Euclidean distance matrix, exactly symmetric with a zero diagonal."""
    V = np.asarray(V, dtype=np.float64)
    diff = V[:, None, :] - V[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


# --- similarity levels ------------------------------------------------------------


def similarity_level(la: Sequence[int], lb: Sequence[int]) -> str:
    if len(la) != len(lb):
        raise ShapeMismatch(f"label vectors differ in length: {len(la)} vs {len(lb)}")
    return "".join("1" if a == b else "0" for a, b in zip(la, lb))


def all_levels(k: int) -> list[str]:
    """Every K-bit level, highest ('1'*K) first."""
    return ["".join(bits) for bits in itertools.product("10", repeat=k)]


def product_geq(s: str, t: str) -> bool:
    """Product order on levels: s >= t iff s_k >= t_k for every k."""
    if len(s) != len(t):
        raise ShapeMismatch("levels differ in length")
    return all(a >= b for a, b in zip(s, t))


def comparable(s: str, t: str) -> bool:
    return product_geq(s, t) or product_geq(t, s)


def lexicographic_key(level: str, priority: Sequence[int]) -> tuple[int, ...]:
    """Sort key ranking levels lexicographically, most important label index first."""
    return tuple(int(level[k]) for k in priority)


def _check_pattern(pattern: str, k: int | None = None) -> str:
    if not pattern or any(ch not in "01*" for ch in pattern):
        raise ValueError(f"invalid similarity level {pattern!r}: use characters 0, 1 or *")
    if k is not None and len(pattern) != k:
        raise ShapeMismatch(f"level {pattern!r} does not have {k} labels")
    return pattern


def agreement(labels) -> np.ndarray:
    """(n, n, K) boolean array: entry [a, j, k] is True when a and j share label k."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    return labels[:, None, :] == labels[None, :, :]


def level_mask(agree: np.ndarray, pattern: str) -> np.ndarray:
    """(n, n) membership mask of the pattern's level set, diagonal excluded."""
    n, _, k = agree.shape
    _check_pattern(pattern, k)
    mask = ~np.eye(n, dtype=bool)
    for j, ch in enumerate(pattern):
        if ch == "1":
            mask &= agree[:, :, j]
        elif ch == "0":
            mask &= ~agree[:, :, j]
    return mask


def level_index_sets(anchor: int, batch_labels) -> dict[str, list[int]]:
    """Partition of batch indices other than ``anchor`` by similarity level to it."""
    labels = np.asarray(batch_labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    n, k = labels.shape
    if not 0 <= anchor < n:
        raise IndexError(f"anchor {anchor} out of range for batch of {n}")
    sets = {lv: [] for lv in all_levels(k)}
    for j in range(n):
        if j != anchor:
            sets[similarity_level(labels[anchor], labels[j])].append(j)
    return sets


# --- configuration ----------------------------------------------------------------------


@dataclass(frozen=True)
class LossComponent:
    margin: float
    weight: float
    pos_level: str
    neg_level: str

    def __post_init__(self):
        _check_pattern(self.pos_level)
        _check_pattern(self.neg_level)
        if len(self.pos_level) != len(self.neg_level):
            raise ShapeMismatch("positive and negative levels differ in length")
        if self.pos_level == self.neg_level:
            raise ValueError(f"positive and negative levels are both {self.pos_level!r}")
        if not (self.margin >= 0 and self.weight >= 0):
            raise ValueError("margin and weight must be non-negative")

    def to_string(self) -> str:
        return f"{self.margin!r},{self.weight!r},{self.pos_level},{self.neg_level}"

    @classmethod
    def parse(cls, text: str) -> "LossComponent":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"component must be 'margin,weight,pos_level,neg_level', got {text!r}")
        return cls(float(parts[0]), float(parts[1]), parts[2], parts[3])


@dataclass(frozen=True)
class LossConfig:
    components: tuple[LossComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a loss configuration needs at least one component")
        if len({len(c.pos_level) for c in comps}) != 1:
            raise ShapeMismatch("all components must use the same number of labels")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components[0].pos_level)

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.components]

    @property
    def margins(self) -> list[float]:
        return [c.margin for c in self.components]

    def with_margins(self, margin: float) -> "LossConfig":
        return LossConfig(tuple(LossComponent(margin, c.weight, c.pos_level, c.neg_level)
                                for c in self.components))

    def with_weights(self, weights: Iterable[float]) -> "LossConfig":
        return LossConfig(tuple(LossComponent(c.margin, w, c.pos_level, c.neg_level)
                                for c, w in zip(self.components, weights, strict=True)))

    def to_lines(self) -> list[str]:
        return [f"component = {c.to_string()}" for c in self.components]


_BUILTIN = {
    # class-only triplet loss: same class (any subject) vs different class
    "a": ([("*1", "*0")], [1.0]),
    # lexicographic order, im_class before subject
    "b": ([("11", "01"), ("01", "10"), ("10", "00")], [1.0, 3.0, 1.0]),
    "c": ([("11", "01"), ("01", "10"), ("10", "00")], [1.0, 1.0, 1.0]),
    # product order
    "d": ([("11", "10"), ("11", "01"), ("10", "00"), ("01", "00")], [1.0, 1.0, 1.0, 1.0]),
}
BUILTIN_NAMES = tuple(_BUILTIN)


def builtin_config(name: str, margin: float = DEFAULT_MARGIN) -> LossConfig:
    try:
        pairs, weights = _BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown loss configuration {name!r}; expected one of {BUILTIN_NAMES}") from None
    return LossConfig(tuple(LossComponent(margin, w, p, n) for (p, n), w in zip(pairs, weights)))


# --- losses -----------------------------------------------------------------------------


def _as_triplets(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.int64)
    if T.size == 0:
        return T.reshape(0, 3)
    if T.ndim != 2 or T.shape[1] != 3:
        raise ShapeMismatch(f"triplets must have shape (m, 3), got {T.shape}")
    return T


def _positive_sum(h: np.ndarray) -> float:
    # summing only the active hinges keeps the value independent of inactive triplets
    return float(h[h > 0].sum())


def triplet_loss(T, V, alpha: float, reduction: str = "sum") -> float:
    """Sum over (a, p, n) in T of max(d(a, p) - d(a, n) + alpha, 0)."""
    T = _as_triplets(T)
    V = np.asarray(V, dtype=np.float64)
    if len(T) == 0:
        return 0.0
    n = V.shape[0]
    if T.min() < 0 or T.max() >= n:
        raise IndexError(f"triplet index out of range for {n} embeddings")
    a, p, q = T.T
    if np.any(a == p) or np.any(a == q) or np.any(p == q):
        raise ValueError("triplet indices must be pairwise distinct")
    D = pairwise_distances(V)
    h = D[a, p] - D[a, q] + alpha
    total = _positive_sum(h)
    if reduction == "mean":
        active = int(np.count_nonzero(h > 0))
        return total / active if active else 0.0
    return total


@dataclass(frozen=True)
class LadderSpec:
    margins: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.margins) < 1 or len(self.margins) != len(self.weights):
            raise ValueError("a ladder needs L-1 >= 1 margins and as many weights")

    @property
    def n_levels(self) -> int:
        return len(self.margins) + 1


def ladder_loss(V, levels, spec: LadderSpec) -> float:
    """Ladder loss given an (n, n) matrix of levels 1..L; ``levels[a, j]`` is j's level relative to anchor a.

    The diagonal is ignored.
    """
    V = np.asarray(V, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.int64)
    n = V.shape[0]
    if levels.shape != (n, n):
        raise ShapeMismatch(f"levels must be ({n}, {n}), got {levels.shape}")
    off = ~np.eye(n, dtype=bool)
    if np.any((levels[off] < 1) | (levels[off] > spec.n_levels)):
        raise IndexError(f"levels must lie in 1..{spec.n_levels}")
    D = pairwise_distances(V)
    total = 0.0
    for lvl, (alpha, beta) in enumerate(zip(spec.margins, spec.weights), start=1):
        pos = off & (levels == lvl)
        neg = off & (levels == lvl + 1)
        total += beta * _masked_hinge_sum(D, pos, neg, alpha)
    return total


def _hinges(D, pos, neg, alpha):
    h = D[:, :, None] - D[:, None, :] + alpha
    return h, pos[:, :, None] & neg[:, None, :]


def _masked_hinge_sum(D, pos, neg, alpha) -> float:
    h, mask = _hinges(D, pos, neg, alpha)
    return _positive_sum(h[mask])


def _check_labels(V, labels, config):
    V = np.asarray(V, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[0] != V.shape[0]:
        raise ShapeMismatch(f"{labels.shape[0]} label rows for {V.shape[0]} embeddings")
    if labels.shape[1] != config.k:
        raise ShapeMismatch(f"configuration expects {config.k} labels, batch has {labels.shape[1]}")
    return V, labels


def product_ladder_loss(V, batch_labels, config: LossConfig, reduction: str = "sum") -> float:
    """Weighted sum over components of triplet losses on {a} x A_a(pos) x A_a(neg)."""
    return product_ladder_loss_and_grad(V, batch_labels, config, reduction, with_grad=False)[0]


def product_ladder_loss_and_grad(V, batch_labels, config: LossConfig, reduction: str = "sum",
                                 with_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Loss and its gradient with respect to the embeddings V.

    With ``reduction="mean"`` the loss is divided by the number of active
    (positive-hinge) triplets across all components. At coincident points the
    distance gradient is taken as zero.
    """
    V, labels = _check_labels(V, batch_labels, config)
    n = V.shape[0]
    D = pairwise_distances(V)
    agree = agreement(labels)
    total = 0.0
    n_active = 0
    dD = np.zeros((n, n)) if with_grad else None
    for comp in config.components:
        pos = level_mask(agree, comp.pos_level)
        neg = level_mask(agree, comp.neg_level)
        h, mask = _hinges(D, pos, neg, comp.margin)
        active = mask & (h > 0)
        n_active += int(np.count_nonzero(active))
        total += comp.weight * _positive_sum(h[mask])
        if with_grad:
            g = comp.weight * active
            dD += g.sum(axis=2)
            dD -= g.sum(axis=1)
    if reduction == "mean":
        scale = 1.0 / n_active if n_active else 0.0
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    if not with_grad:
        return total * scale, None
    return total * scale, scale * distance_backward(V, D, dD)


def distance_backward(V, D, dD) -> np.ndarray:
    """Chain rule through pairwise_distances: returns dL/dV given dL/dD."""
    S = dD + dD.T
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(D > 0, S / D, 0.0)
    diff = V[:, None, :] - V[None, :, :]
    return np.sum(U[:, :, None] * diff, axis=1)
