"""Named random streams derived from one run seed."""

import zlib

import numpy as np


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named use of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
