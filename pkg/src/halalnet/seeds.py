"""Named random substreams derived from one root seed.

Every randomized component (sampler, augmentation, weight init, eval pair
selection, synthesis) pulls its generator from here, so fixing the root seed
reproduces the whole run while still letting each component be re-run in
isolation.  Stream identity comes from a CRC of the component name, which is
stable across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def substream(root_seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root_seed) & _MASK, zlib.crc32(name.encode("utf-8"))])


def rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream(root_seed, name))
