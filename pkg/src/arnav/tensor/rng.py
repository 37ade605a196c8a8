"""Named, seedable random streams.

Every stochastic consumer in the package draws from its own counter-based
(Philox) stream derived from (master seed, stream name, indices).  Streams
are independent, platform-stable, and safe to create concurrently, so
reordering or parallelizing consumers never changes any drawn value.
"""

from __future__ import annotations

import numpy as np

# Registry of stream names -> fixed ids.  Append only; never renumber.
STREAMS = {
    "init": 0,
    "dropout": 1,
    "data_order": 2,
    "disturbance": 3,
    "world": 4,
    "routes": 5,
    "altitude": 6,
    "campaign": 7,
    "augment": 8,
}


def stream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for stream ``name`` (optionally sub-indexed,
    e.g. per flight or per route)."""
    if name not in STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; registered: {sorted(STREAMS)}")
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(STREAMS[name], *[int(i) for i in indices]),
    )
    return np.random.Generator(np.random.Philox(ss))
