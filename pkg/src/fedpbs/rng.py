"""Deterministic seed-substream derivation.

All randomness in an experiment flows from one 64-bit master seed.
Every independent consumer (partitioning, weight init, per-round client
sampling, per-(client, round) mini-batch shuffling, per-(client, round)
variance probes) draws from its own substream, whose seed is derived by
folding ``(master_seed, purpose_tag, *indices)`` through the splitmix64
finalizer. Substreams are therefore independent of execution order and
worker count: adding, removing, or reordering consumers never perturbs
anyone else's stream.

The mix function is fixed forever; changing it invalidates every
recorded result.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    """One round of the splitmix64 output permutation."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, tag: str, *indices: int) -> int:
    """64-bit seed of the substream labelled (tag, *indices)."""
    h = _splitmix64(master & _MASK64)
    for byte in tag.encode("utf-8"):
        h = _splitmix64(h ^ byte)
    for idx in indices:
        h = _splitmix64(h ^ (idx & _MASK64))
    return h


def substream(master: int, tag: str, *indices: int) -> np.random.Generator:
    """Fresh PCG64 generator for the substream labelled (tag, *indices)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, tag, *indices)))
