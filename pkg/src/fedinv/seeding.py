"""Per-purpose random streams derived from one experiment seed.

A stream is ``SeedSequence(entropy=seed, spawn_key=(crc32(label),))``, so
the data-generation stream never depends on how many rounds are run or on
which other streams were drawn first.
"""

import zlib

import numpy as np


def stream(seed, label):
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))))
