"""Named, splittable random streams.

Every stochastic routine in the package takes an explicit ``numpy.random.Generator``.
Streams are derived from an integer seed plus a path of names/integers so that
independent consumers (dataset split, agent sampling, per-step perturbation) never
share a generator and reordering one consumer never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


def seed_words(seed: int, *path: int | str) -> list[int]:
    """Entropy words for the stream ``seed/path...``; JSON-serialisable for replay logs."""
    return [_word(seed)] + [_word(k) for k in path]


def stream(seed: int, *path: int | str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed_words(seed, *path)))


def from_words(words: list[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(words)))
