import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for ``name`` derived from a root ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
