"""
Seeded random streams.

Every stream is a numpy ``Philox`` (4x64, counter-based) generator keyed by a ``SeedSequence`` built from the user seed
and a tuple of integer keys, e.g. ``(replication,)`` or ``(replication, chunk)``. Philox's round constants are fixed by
its definition, so a given ``(seed, keys)`` pair produces the same stream on every platform and in every thread.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    sequence = np.random.SeedSequence(entropy=seed & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a new 64-bit seed, used to hand a sub-seed to code that takes a plain integer seed."""
    sequence = np.random.SeedSequence(entropy=seed & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
