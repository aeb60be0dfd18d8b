"""Seedable random streams with deterministic substream derivation."""

from __future__ import annotations

import numpy as np


class RngStream:
    """A seeded random generator that can spawn independent substreams.

    Two streams built from the same seed and substream key produce identical
    draw sequences, which is what makes whole runs bitwise reproducible.
    Substreams let a simulated world evolve identically while the filter
    consumes its own independent noise (same world seed, different strategy).
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (index,))

    def __getattr__(self, name):
        # Delegate draw methods (normal, uniform, integers, ...) to numpy.
        if name.startswith("_") or name in ("seed", "key", "gen"):
            raise AttributeError(name)
        return getattr(self.gen, name)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


# Conventional substream indices used by the experiment drivers.
WORLD_STREAM = 0
FILTER_STREAM = 1
