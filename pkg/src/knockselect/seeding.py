"""Named, independent random streams derived from one run seed."""
import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for ``(seed, name)``; distinct names give independent streams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
