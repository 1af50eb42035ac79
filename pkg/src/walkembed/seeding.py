"""Deterministic random-stream derivation.

Every run draws all of its randomness from a single root seed.  Independent
components (model init, each training epoch, each scoring pass, each grid
cell) get their own stream derived from the root seed plus a tag sequence,
so the streams are stable no matter how the surrounding work is ordered or
parallelised.

Derivation: each tag (a string or int) is hashed with SHA-256 and the first
8 bytes are taken as an integer; the root seed followed by the tag integers
feeds numpy's SeedSequence.  Same root and tags, same stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: str | int) -> int:
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_seed(root: int, *tags: str | int) -> list[int]:
    """Entropy sequence for the stream identified by ``tags`` under ``root``."""
    return [int(root) & 0xFFFFFFFFFFFFFFFF, *(_tag_to_int(t) for t in tags)]


def derive_rng(root: int, *tags: str | int) -> np.random.Generator:
    """A generator whose stream depends only on ``root`` and ``tags``."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(root, *tags)))
