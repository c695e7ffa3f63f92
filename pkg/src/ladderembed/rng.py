"""Counter-based SplitMix64 stream.

Every random quantity in the package is derived from this generator so that
synthetic datasets, initial weights and batch draws are reproducible
bit-for-bit without depending on numpy's generator internals.

Draw ``i`` of a stream with key ``k`` is ``mix64(k + (i + 1) * GAMMA)`` where
``mix64`` is the SplitMix64 finalizer. Uniform doubles take the top 53 bits.
Standard normals use Box-Muller (cosine branch) on draws ``2j`` and ``2j+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_TWO_M53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, *path: int) -> int:
    """Hash a seed and a path of non-negative integers into a stream key."""
    key = mix64(int(seed) & _MASK)
    for part in path:
        key = mix64(key ^ mix64((int(part) + 1) * GAMMA))
    return key


def raw_draws(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + 1 + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + idx * np.uint64(GAMMA)
        return _mix64_array(z)


def uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Doubles in [0, 1)."""
    return (raw_draws(key, start, count) >> np.uint64(11)).astype(np.float64) * _TWO_M53


def normals(key: int, start: int, count: int) -> np.ndarray:
    """Standard normals; normal ``j`` consumes draws ``start+2j`` and ``start+2j+1``."""
    z = raw_draws(key, start, 2 * count) >> np.uint64(11)
    u1 = (z[0::2].astype(np.float64) + 1.0) * _TWO_M53  # (0, 1], log-safe
    u2 = z[1::2].astype(np.float64) * _TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class RngState:
    """Immutable position in a stream. Draw methods return the advanced state."""

    key: int
    counter: int = 0

    @classmethod
    def from_seed(cls, seed: int, *path: int) -> "RngState":
        return cls(derive_key(seed, *path), 0)

    def uniform(self, count: int) -> tuple[np.ndarray, "RngState"]:
        return uniforms(self.key, self.counter, count), RngState(self.key, self.counter + count)

    def normal(self, count: int) -> tuple[np.ndarray, "RngState"]:
        return normals(self.key, self.counter, count), RngState(self.key, self.counter + 2 * count)

    def integers(self, high: int, count: int) -> tuple[np.ndarray, "RngState"]:
        """Integers in [0, high) by scaling uniforms."""
        u, state = self.uniform(count)
        out = np.minimum((u * high).astype(np.int64), high - 1)
        return out, state
