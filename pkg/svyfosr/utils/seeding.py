"""Counter-based random streams.

Stream ``(seed, tag, index)`` is the same no matter which worker draws it or in
which order, so parallel output never depends on the worker count.
"""
import enum

import numpy as np


class Stream(int, enum.Enum):
    """Namespaces keeping unrelated draws on disjoint streams."""
    BOOTSTRAP = 1
    BRR = 2
    RWYB = 3
    CMA = 4
    STRUCTURE = 5
    STRATUM = 6
    OUTCOME = 7
    SAMPLING = 8
    SUBSAMPLE = 9
    PILOT = 10


def stream_rng(seed: int, tag: Stream, index: int = 0) -> np.random.Generator:
    """Generator for replicate/stratum ``index`` of stream ``tag``."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(index)))
    )
