"""Deterministic named random streams.

Every draw in the package flows from a single experiment seed through
named sub-streams, so adding a new consumer never perturbs the draws of
existing ones.  Integer tokens (user ids, session indices) pass through
unchanged; string tokens are hashed to a stable 32-bit word.
"""

import hashlib

import numpy as np


def _token(value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value) % (1 << 32)
    digest = hashlib.sha256(str(value).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *names)."""
    entropy = [int(seed) % (1 << 32)] + [_token(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
