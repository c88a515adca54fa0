"""Named, independent random streams derived from a single master seed.

Every source of randomness in a run (partitioning, parameter init, dropout,
batch shuffling, DP noise, attack starts, synthetic data) draws from its own
stream so components can be varied independently without perturbing the rest.
"""

from __future__ import annotations

import numpy as np

# Stable stream ids; appending new names is fine, renumbering is not
# (it would silently change every seeded run).
_STREAMS = {
    "synth": 1,
    "split": 2,
    "partition": 3,
    "init": 4,
    "shuffle": 5,
    "dropout": 6,
    "dp": 7,
    "attack": 8,
}


def stream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for `name` (optionally sub-indexed, e.g. by
    participant and round) under `master_seed`."""
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    seq = np.random.SeedSequence([int(master_seed), _STREAMS[name], *map(int, indices)])
    return np.random.Generator(np.random.PCG64(seq))
