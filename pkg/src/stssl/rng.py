"""Splittable, seed-addressed random streams.

Every stream is identified by a 64-bit key. Child keys are derived with the
SplitMix64 finalizer, and bulk draws come from numpy's counter-based Philox
generator keyed by the stream key, so a (seed, path of child indices) pair
produces the same numbers on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
# SplitMix64 constants (Steele, Lea & Flood 2014).
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL_1 = 0xBF58476D1CE4E5B9
MIX_MUL_2 = 0x94D049BB133111EB


def splitmix64_mix(z: int) -> int:
    """SplitMix64 output function. A bijection on 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_MUL_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL_2) & MASK64
    return z ^ (z >> 31)


def _index_of(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"child index must be non-negative, got {key}")
    return key


class RngStream:
    """A named random stream.

    ``RngStream(seed)`` is the root; ``stream.child(i)`` derives an
    independent stream. String children are mapped to a 32-bit index via
    CRC-32 so ``child("augment")`` is stable across runs and platforms.

    Distinct child indices of one parent never collide: the pre-mix value
    ``key + (i + 1) * GOLDEN_GAMMA`` is distinct for every ``i < 2**64``
    (the gamma is odd) and the mix is a bijection.
    """

    __slots__ = ("key", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.stream_id = int(stream_id)
        self.key = splitmix64_mix((int(seed) & MASK64) + (self.stream_id + 1) * GOLDEN_GAMMA)
        self._gen: np.random.Generator | None = None

    @classmethod
    def _from_key(cls, key: int, stream_id: int) -> "RngStream":
        obj = cls.__new__(cls)
        obj.key = key
        obj.stream_id = stream_id
        obj._gen = None
        return obj

    def child(self, key: int | str) -> "RngStream":
        idx = _index_of(key)
        return RngStream._from_key(
            splitmix64_mix(self.key + (idx + 1) * GOLDEN_GAMMA), idx
        )

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=self.key))
        return self._gen

    # thin delegation, so call sites read like numpy
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size, replace=replace)

    def permutation(self, x):
        return self.generator.permutation(x)

    def __repr__(self) -> str:
        return f"RngStream(key=0x{self.key:016x}, stream_id={self.stream_id})"
