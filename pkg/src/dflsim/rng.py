"""Counter-based random streams keyed by (node, step, purpose).

Every stochastic draw in the simulator goes through `seed_stream`, so a run
is a pure function of its master seed no matter in which order the per-node
work is executed.  Streams for distinct (node, step, purpose) triples are
statistically independent; the same triple always yields the same stream.
"""
from __future__ import annotations

import zlib

import numpy as np


def _purpose_id(purpose: str) -> int:
    # crc32 is stable across platforms and Python versions.
    return zlib.crc32(purpose.encode("utf-8"))


def seed_stream(master_seed: int, node: int, step: int, purpose: str) -> np.random.Generator:
    """Derive an independent generator for one (node, step, purpose) triple."""
    if node < 0 or step < 0:
        raise ValueError("node and step must be non-negative")
    seq = np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(int(node), int(step), _purpose_id(purpose)),
    )
    return np.random.Generator(np.random.PCG64(seq))
