import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Philox-4x64 counter-based generator.

    Philox streams are fully specified by (key, counter), so a seed gives the
    same numbers on every platform and numpy version that ships Philox.
    Passing an existing Generator returns it unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))
