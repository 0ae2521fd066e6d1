"""Deterministic random-stream derivation.

Every random choice in the package flows from one integer seed.  Components
derive their own independent streams by name, so adding a consumer never
perturbs the draws seen by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_seed(seed: int, *labels) -> np.random.SeedSequence:
    """Child seed sequence for the stream identified by ``labels``."""
    key = tuple(zlib.crc32(str(lab).encode("utf-8")) for lab in labels)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def stream_rng(seed: int, *labels) -> np.random.Generator:
    """Generator for the named stream; same arguments, same draws."""
    return np.random.default_rng(stream_seed(seed, *labels))
