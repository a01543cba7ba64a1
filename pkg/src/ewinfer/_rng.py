import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based child generator for ``(seed, *keys)``.

    Streams for different key tuples are independent, and a given tuple always
    yields the same stream regardless of how work is scheduled.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit integer seed derived from ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
