"""Paired Wilcoxon signed-rank test and Holm-Bonferroni step-down correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .errors import AllZeroDifferences, ShapeMismatch

EXACT_MAX_N = 25


@dataclass(frozen=True)
class StatResult:
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # pairs left after dropping zero differences
    w_plus: float
    w_minus: float
    exact: bool
    rejected: bool | None = None

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n,
                "w_plus": self.w_plus, "w_minus": self.w_minus, "exact": self.exact,
                "rejected": self.rejected}


def _subset_sum_counts(weights: np.ndarray) -> np.ndarray:
    """counts[s] = number of subsets of the integer weights summing to s."""
    counts = np.zeros(int(weights.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for w in weights.tolist():
        counts[w:] = counts[w:] + counts[: len(counts) - w].copy()
    return counts


def wilcoxon_signed_rank(a, b) -> StatResult:
    """Two-sided signed-rank test on a - b.

    Zero differences are dropped, tied magnitudes get average ranks. The
    p-value is exact (distribution of W+ over all 2^n sign assignments of the
    observed ranks) for n <= 25 and uses the tie-corrected normal
    approximation above that.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch("paired samples must be 1-D and of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = rankdata(np.abs(d))  # average ranks, always multiples of 1/2
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    w_minus = total - w_plus
    stat = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _subset_sum_counts(doubled)
        k = int(round(2 * stat))
        p = min(1.0, 2.0 * counts[: k + 1].sum() / 2.0**n)
        return StatResult(stat, p, n, w_plus, w_minus, exact=True)

    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    z = (stat - total / 2.0) / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return StatResult(stat, p, n, w_plus, w_minus, exact=False)


def holm_bonferroni(p_values, alpha: float = 0.05) -> list[bool]:
    """Step-down rejections, returned in input order.

    The i-th smallest p (1-based) is rejected while p <= alpha / (m - i + 1);
    the first failure accepts it and everything after it.
    """
    p = [float(x) for x in p_values]
    m = len(p)
    decisions = [False] * m
    for i, j in enumerate(sorted(range(m), key=lambda j: p[j])):
        if p[j] <= alpha / (m - i):
            decisions[j] = True
        else:
            break
    return decisions
