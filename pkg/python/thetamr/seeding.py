"""Seed derivation shared by sampling, global ids and data generation."""

import hashlib
from functools import lru_cache
from typing import Union

import numpy as np


def seed_sequence(seed: int, *labels: Union[str, int]) -> np.random.SeedSequence:
    """Derive a SeedSequence from a run seed and a stable label path."""
    material = "\x1f".join([str(seed)] + [str(label) for label in labels])
    digest = hashlib.sha256(material.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
    return np.random.SeedSequence(words)


def rng_for(seed: int, *labels: Union[str, int]) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *labels))


@lru_cache(maxsize=128)
def global_ids(seed: int, relation: str, cardinality: int) -> np.ndarray:
    """Seeded permutation of 1..cardinality, indexed by row position; read-only."""
    ids = rng_for(seed, "global-ids", relation).permutation(cardinality) + 1
    ids.setflags(write=False)
    return ids
