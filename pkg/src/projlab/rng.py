"""Reproducible random streams.

Every random draw in the lab flows through an :class:`RngStream`, a thin
wrapper over numpy's Philox4x64-10 counter-based generator.  The Philox key is
``(seed, stream_id)`` and the 256-bit block counter starts at ``counter``, so a
stream is fully identified by those three integers.  Child streams get their
id from the SplitMix64 finaliser applied to the parent id and a child index,
which lets grid cells, captures and attack steps draw from disjoint streams
regardless of execution order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea & Flood 2014).
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_stream_id(parent: int, *path) -> int:
    sid = parent & MASK64
    for part in path:
        if isinstance(part, str):
            # Stable across interpreter runs, unlike hash().
            raw = part.encode("utf-8")
            acc = len(raw)
            for i in range(0, len(raw), 8):
                acc = splitmix64(acc ^ int.from_bytes(raw[i : i + 8].ljust(8, b"\0"), "little"))
            part = acc
        elif isinstance(part, float):
            part = int.from_bytes(np.float64(part).tobytes(), "little")
        sid = splitmix64(sid ^ splitmix64(int(part) & MASK64))
    return sid


class RngStream:
    """A seeded, counter-addressable random stream."""

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.start_counter = int(counter)
        bitgen = np.random.Philox(key=[self.seed, self.stream_id], counter=self.start_counter)
        self._gen = np.random.Generator(bitgen)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#x}, counter={self.counter})"

    @property
    def counter(self) -> int:
        """Current Philox block counter (low 64 bits)."""
        return int(self._gen.bit_generator.state["state"]["counter"][0])

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *path) -> "RngStream":
        return RngStream(self.seed, derive_stream_id(self.stream_id, *path))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.normal(0.0, scale, size)

    def rademacher(self, size):
        return self._gen.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)
