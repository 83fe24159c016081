"""Deterministic random number generation.

Every random draw in this package (weight init, batch shuffling, synthetic
data) comes from a counter-based SplitMix64 stream so results are
bit-reproducible for a given seed and independent of library RNG internals.

Algorithm (SplitMix64, Steele/Lea/Vigna 2014): the i-th 64-bit output of a
stream with key ``k`` is ``mix64(k + (i + 1) * GAMMA) mod 2**64`` where
``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` is the xor-shift/multiply
finalizer below. Derived values:

* uniform doubles in [0, 1): top 53 bits scaled by 2**-53
* gaussians: Box-Muller on uniform pairs (u1 shifted into (0, 1])
* permutations: stable argsort of per-index 64-bit draws

Stream keys are derived by folding an arbitrary mix of integers and strings
(strings via 64-bit FNV-1a) through ``mix64``, so independent purposes
("init", "noise", ...) get decorrelated streams from one master seed.
"""

from __future__ import annotations

import numpy as np

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer; wraps modulo 2**64."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def derive_key(*parts: int | str) -> int:
    """Fold seed components into one 64-bit stream key.

    ``derive_key(seed, "member", i)`` style calls give each purpose its own
    stream; the fold is ``h = mix64(h + GAMMA ^ part)`` over the parts.
    """
    h = np.uint64(0)
    for part in parts:
        value = _fnv1a(part) if isinstance(part, str) else part & 0xFFFFFFFFFFFFFFFF
        with np.errstate(over="ignore"):
            h = np.uint64(mix64((h + GAMMA) ^ np.uint64(value)))
    return int(h)


class Stream:
    """Counter-based SplitMix64 stream with a running counter."""

    def __init__(self, key: int):
        self.key = np.uint64(key & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(self.key + idx * GAMMA)

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        m = (n + 1) // 2
        bits = self.uint64(2 * m)
        # u1 in (0, 1] so log never sees 0; u2 in [0, 1)
        u1 = ((bits[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (bits[m:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return mean + std * z

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uint64(n), kind="stable")
