"""Seeded random numbers.

Uniform draws come from numpy's PCG64 bit generator (64-bit state, O'Neill's
PCG-XSL-RR 128/64), which produces the same stream on every platform for a
given seed. Normal samples are produced here with the Box-Muller transform so
the mapping from uniforms to normals is fixed and documented, independent of
numpy's own normal sampler.
"""

from __future__ import annotations

import numpy as np

_U64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int = 0):
        seed = int(seed)
        if seed < 0 or seed > _U64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, shape=()) -> np.ndarray:
        """Float64 samples in [0, 1)."""
        return self._gen.random(shape)

    def normal(self, shape=(), std: float = 1.0, dtype=np.float32) -> np.ndarray:
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return (std * z[:n]).reshape(shape).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent generator whose seed depends only on (seed, key)."""
        mixed = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, int(key)])
        return Rng(int(mixed.generate_state(1, dtype=np.uint64)[0]))
