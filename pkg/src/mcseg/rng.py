"""Seedable, portable random streams.

Every random draw in this package comes from a Philox4x64 counter-based
bit generator keyed by ``(seed, stream)``. Philox is fully specified by its
key and counter, so a given (seed, stream) pair pins the byte stream on any
platform. Gaussian variates additionally depend on numpy's ziggurat
sampler, so full bit-reproducibility assumes a fixed numpy version.

The stream constants keep independent consumers (phantom geometry, noise,
weight init, shuffling, ...) decoupled: adding draws to one consumer never
shifts any other.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Frozen stream ids. Changing any value changes downstream artifacts
# byte-for-byte.
GEOMETRY = 0x47454F4D
NOISE = 0x4E4F4953
PCA_START = 0x50434153
WEIGHT_INIT = 0x57494E49
SHUFFLE = 0x53485546
FCM_INIT = 0x46434D49
SAMPLE_SEED = 0x53454544


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Return the deterministic generator for a (seed, purpose) pair."""
    key = np.array([seed & _MASK64, purpose & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(master_seed: int, index: int) -> int:
    """Derive the per-item seed ``index`` from a master seed.

    Defined as the first 63-bit draw of ``stream(master_seed,
    SAMPLE_SEED + index)`` so items are independent and reorderable.
    """
    return int(stream(master_seed, SAMPLE_SEED + index).integers(0, 1 << 63))
