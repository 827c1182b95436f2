"""Seeded, splittable random streams.

Streams are keyed by ``(seed, stream_id)`` on a counter-based Philox bit
generator, so parallel producers (per-clip rendering, per-step noise) each own
an independent stream and the whole pipeline replays bit-identically from the
seeds alone.  ``counter`` records how many sampling calls the stream has
served; it is bookkeeping for diagnostics, the generator state itself advances
deterministically per draw.
"""

from __future__ import annotations

import numpy as np


def _validate_shape(shape):
    shape = (shape,) if isinstance(shape, int) else tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"shape extents must be positive, got {shape}")
    return shape


class RandomStream:
    """One independent random sequence identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = 0
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return (f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, "
                f"counter={self.counter})")

    def child(self, stream_id: int) -> "RandomStream":
        """Derive an independent stream under the same seed."""
        return RandomStream(self.seed, stream_id)

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        """I.i.d. standard normal draws."""
        shape = _validate_shape(shape)
        self.counter += 1
        return self._gen.standard_normal(size=shape, dtype=np.float64).astype(dtype)

    def uniform(self, shape, dtype=np.float32) -> np.ndarray:
        """I.i.d. draws in [0, 1)."""
        shape = _validate_shape(shape)
        self.counter += 1
        return self._gen.random(size=shape, dtype=np.float64).astype(dtype)

    def uniform_scalar(self) -> float:
        self.counter += 1
        return float(self._gen.random())

    def integers(self, low: int, high: int, shape=None) -> np.ndarray | int:
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        self.counter += 1
        if shape is None:
            return int(self._gen.integers(low, high))
        return self._gen.integers(low, high, size=_validate_shape(shape))

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)
