"""Keyed random streams.

Every stochastic ingredient is drawn from a Philox generator whose key is
derived from ``(master seed, *indices)``. A stream therefore depends only on
its indices, never on the order in which streams are created or on how work
is split across workers.
"""
from __future__ import annotations

import numpy as np

# Stream-id namespaces; the first key component after the master seed.
POPULATION = 0
DESIGN = 1
INFERENCE = 2

# Tags that keep keyed streams, spawned children and plain integer seeds in
# disjoint parts of the key space; user keys stay below them.
_KEY_LIMIT = 2**31
_KEYED = 2**32 - 1
_CHILD = 2**32 - 2


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    if seed is None:
        raise ValueError("a master seed is required")
    spawn_key = tuple(int(k) for k in key)
    if any(not 0 <= k < _KEY_LIMIT for k in spawn_key):
        raise ValueError(f"stream keys must lie in [0, 2**31), got {key}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_KEYED,) + spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed, or a SeedSequence."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(rng))
    if rng is None:
        raise ValueError("a seed or Generator is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(rng))))


def child_streams(rng, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived deterministically from ``rng``."""
    parent = as_generator(rng)
    out = []
    for ss in parent.bit_generator.seed_seq.spawn(n):
        # retag so a child never equals a keyed stream with one more index
        key = ss.spawn_key[:-1] + (_CHILD, ss.spawn_key[-1])
        out.append(np.random.Generator(np.random.Philox(np.random.SeedSequence(ss.entropy, spawn_key=key))))
    return out
