"""
Counter-based random streams.

Every draw from a NoiseSource gets its own PCG64 generator keyed by
(seed, stream key, position), so a draw is reproducible from those three
values alone and child streams never overlap their parent.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Shape = Union[int, Sequence[int]]


class NoiseSource:
    """A seeded random stream with a draw counter."""

    def __init__(self, seed: int, key: Sequence[int] = (), position: int = 0):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.position = int(position)

    def __repr__(self) -> str:
        return f"NoiseSource(seed={self.seed}, key={self.key}, position={self.position})"

    def generator(self) -> np.random.Generator:
        """Generator for the draw at the current position; advances the position."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key + (self.position,))
        self.position += 1
        return np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, *key: int) -> "NoiseSource":
        """Independent child stream; the parent's position is untouched."""
        return NoiseSource(self.seed, self.key + tuple(int(k) for k in key))

    def normal(self, shape: Shape, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self.generator().normal(loc, scale, size=shape)

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator().uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape: Shape) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self.generator().integers(low, high, size=shape)

    def choice(self, options: Sequence[float], shape: Shape) -> np.ndarray:
        """Uniform draws from a finite set of options."""
        values = np.asarray(options)
        return values[self.integers(0, len(values), shape)]
