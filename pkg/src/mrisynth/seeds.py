"""Deterministic seed derivation for pipeline stages.

Every random draw in the engine comes from a generator keyed by a child
seed derived from (master seed, stage name, indices...) through a stable
hash. Child streams are independent, so adding or removing a pipeline
stage never perturbs the randomness of unrelated stages, and results do
not depend on which worker executed which sample.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *tokens) -> int:
    """Derive a 64-bit child seed from a master seed and a stage path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for tok in tokens:
        h.update(b"/")
        h.update(str(tok).encode())
    return int.from_bytes(h.digest(), "little") & _MASK64


def make_rng(seed: int, *tokens) -> np.random.Generator:
    """Counter-based generator for the stream at (seed, *tokens)."""
    if tokens:
        seed = derive_seed(seed, *tokens)
    return np.random.Generator(np.random.Philox(key=seed))
