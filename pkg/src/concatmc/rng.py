"""Reproducible random streams.

Every stream is a PCG64 generator seeded from ``SeedSequence(seed,
spawn_key=(stream_id,))``, so distinct ``stream_id`` values under one seed give
statistically independent streams, and the same pair always replays the same
draws. Uniforms are pulled from numpy in blocks and handed out one at a time,
which keeps the per-event cost of pure-Python samplers low without changing
the sequence.
"""

from __future__ import annotations

import math

import numpy as np

_BLOCK = 2048


class RngStream:
    __slots__ = ("seed", "stream_id", "sub", "_gen", "_buf", "_pos")

    def __init__(self, seed: int, stream_id: int = 0, sub: tuple = ()):
        if not 0 <= int(seed) < 2**64 or not 0 <= int(stream_id) < 2**64:
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.sub = tuple(int(k) for k in sub)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.sub)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._buf: list[float] = []
        self._pos = 0

    def __repr__(self) -> str:
        sub = f", sub={self.sub}" if self.sub else ""
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}{sub})"

    def uniform(self) -> float:
        """A uniform draw on the half-open interval [0, 1)."""
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(_BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self, rate: float) -> float:
        """Inverse-CDF exponential draw; ``inf`` for a zero rate."""
        if rate <= 0.0:
            return math.inf
        # 1 - u lies in (0, 1], so the log is finite
        return -math.log(1.0 - self.uniform()) / rate

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def choice(self, cumulative: list[float]) -> int:
        """Index ``i`` with probability ``cumulative[i] - cumulative[i-1]``.

        ``cumulative`` is nondecreasing with last entry equal to the total mass;
        the draw is scaled by that total so rounding never falls off the end.
        """
        u = self.uniform() * cumulative[-1]
        for i, c in enumerate(cumulative):
            if u < c:
                return i
        return len(cumulative) - 1

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def child(self, *keys: int) -> "RngStream":
        """An independent stream below this one; used for per-chunk replication."""
        return RngStream(self.seed, self.stream_id, self.sub + tuple(keys))
