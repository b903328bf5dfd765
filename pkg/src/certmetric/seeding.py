"""Named random substreams derived from a single root seed.

Every command or operation that draws randomness pulls a generator from
``substream_rng(root, "name", ...)`` so that independent stages (triplet
mining, initialization, noise, search) stay reproducible and decoupled:
changing how many draws one stage makes never shifts another stage's stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def substream_seed(root: int, *names) -> int:
    """Derive a deterministic 64-bit seed for the substream ``names``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key(n) for n in names))
    state = ss.generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def substream_rng(root: int, *names) -> np.random.Generator:
    """A fresh ``numpy`` generator for the substream ``names``."""
    return np.random.default_rng(substream_seed(root, *names))
