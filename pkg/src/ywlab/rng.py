"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by
``(master_seed, purpose tag, path index, *subkeys)``.  The key is hashed
through :class:`numpy.random.SeedSequence`, so the stream for one bundle
never depends on how many other bundles were simulated before it or on
which worker simulated it.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["Stream", "tag_id", "generator"]

_MASK64 = (1 << 64) - 1


def tag_id(tag: str) -> int:
    """Stable 32-bit integer for a purpose tag."""
    return zlib.crc32(tag.encode("utf-8"))


def generator(master_seed: int, tag: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        int(master_seed) & _MASK64,
        spawn_key=(tag_id(tag),) + tuple(int(k) for k in keys),
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Stream:
    """A family of substreams for one path (one noise bundle)."""

    master_seed: int
    path_index: int = 0

    def generator(self, tag: str, *keys: int) -> np.random.Generator:
        return generator(self.master_seed, tag, self.path_index, *keys)

    def child(self, path_index: int) -> "Stream":
        return Stream(self.master_seed, path_index)
