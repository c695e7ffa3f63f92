"""Deliberately naive reference implementations used as independent test oracles."""

import itertools
import math


def dist(u, v):
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(u, v)))


def level_matches(la, lb, pattern):
    for x, y, ch in zip(la, lb, pattern):
        same = x == y
        if ch == "1" and not same or ch == "0" and same:
            return False
    return True


def brute_product_ladder(V, labels, components):
    """components: iterable of (margin, weight, pos_pattern, neg_pattern)."""
    n = len(V)
    total = 0.0
    for margin, weight, pos, neg in components:
        part = 0.0
        for a in range(n):
            for p in range(n):
                if p == a or not level_matches(labels[a], labels[p], pos):
                    continue
                for q in range(n):
                    if q == a or q == p or not level_matches(labels[a], labels[q], neg):
                        continue
                    part += max(dist(V[a], V[p]) - dist(V[a], V[q]) + margin, 0.0)
        total += weight * part
    return total


def brute_wilcoxon_p(diffs):
    """Two-sided p by enumerating every sign assignment of the observed ranks."""
    d = [x for x in diffs if x != 0]
    n = len(d)
    mags = sorted(abs(x) for x in d)
    ranks = []
    for x in d:
        lo = mags.index(abs(x)) + 1
        hi = len(mags) - mags[::-1].index(abs(x))
        ranks.append((lo + hi) / 2)
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    total = sum(ranks)
    w = min(w_plus, total - w_plus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        if min(wp, total - wp) <= w + 1e-9:
            hits += 1
    return hits / 2**n


def holm_adjusted_decisions(p, alpha):
    """Holm via adjusted p-values: p~_(i) = max_{j<=i} min(1, (m-j+1) p_(j))."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    out = [False] * m
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        out[i] = running <= alpha
    return out


def gradient_check(loss_fn, params, grads, h=1e-4, rel_tol=1e-4, abs_floor=1e-6):
    """Central differences on every parameter entry.

    An entry passes if |fd - g| <= rel_tol * max(|fd|, |g|) or |fd - g| <= abs_floor.
    Returns (all_passed, worst_relative_error, number_checked).
    """
    worst, count, ok = 0.0, 0, True
    for name, value in params.items():
        for idx in _ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_fn(plus) - loss_fn(minus)) / (2 * h)
            g = float(grads[name][idx])
            err = abs(fd - g)
            rel = err / max(abs(fd), abs(g), 1e-300)
            if err > abs_floor:
                worst = max(worst, rel)
                ok &= rel <= rel_tol
            count += 1
    return ok, worst, count


def _ndindex(shape):
    import numpy as np

    return np.ndindex(*shape)
