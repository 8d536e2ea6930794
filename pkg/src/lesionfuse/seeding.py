"""Deterministic random streams derived from a single master seed.

Every consumer of randomness gets its own stream, keyed by a stream domain
plus optional indices (tree number, task number, ...).  Streams are
independent of execution order and worker count, which is what makes
end-to-end training bit-reproducible.
"""

import numpy as np

# stream domains; each (domain, *indices) pair is an independent stream
SPLIT = 0
FOREST_TREE = 1
CNN_INIT = 2
CNN_SHUFFLE = 3
SYNTH = 4


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *path: int) -> int:
    """A 64-bit sub-seed for components that carry their own seed field."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)
