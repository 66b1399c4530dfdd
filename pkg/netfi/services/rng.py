"""Seeded random streams shared by the models, the pipeline and the optimizer."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

_MASK64 = (1 << 64) - 1
_BLOCK = 4096
_KEYED_BLOCK = 8


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 64-bit child seed for ``(seed, *keys)``."""
    entropy = [int(seed) & _MASK64, *(int(k) & _MASK64 for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


class RngStream:
    """Counter-based (Philox) stream; identical seed gives an identical sequence.

    Scalar uniforms are served from a pre-drawn block so per-packet models do not
    pay numpy call overhead on every draw. ``at(counter)`` opens the sub-stream
    that Philox keys on ``(seed, counter)``; its draws do not depend on how much
    of any other sub-stream was consumed.
    """

    __slots__ = ("seed", "counter", "_gen", "_buf", "_pos", "_block")

    def __init__(self, seed: int, counter: Optional[int] = None):
        self.seed = int(seed) & _MASK64
        self.counter = counter
        if counter is None:
            bitgen = np.random.Philox(self.seed)
            self._block = _BLOCK
        else:
            bitgen = np.random.Philox(key=self.seed, counter=[0, 0, int(counter) & _MASK64, 0])
            self._block = _KEYED_BLOCK
        self._gen = np.random.Generator(bitgen)
        self._buf: list[float] = []
        self._pos = 0

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniform_between(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate

    def choice(self, cumulative: list[float]) -> int:
        """Index ``i`` with probability ``cumulative[i] - cumulative[i-1]``."""
        u = self.uniform() * cumulative[-1]
        for i, c in enumerate(cumulative):
            if u < c:
                return i
        return len(cumulative) - 1

    def at(self, counter: int) -> "RngStream":
        return RngStream(self.seed, counter=counter)

    def spawn(self, *keys: int) -> "RngStream":
        return RngStream(derive_seed(self.seed, *keys))
