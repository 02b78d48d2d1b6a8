"""Counter-based random streams keyed by ``(seed, trial)``."""

import numpy as np


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent generator for one trial; identical inputs give identical streams."""
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial must be nonnegative")
    return np.random.Generator(np.random.Philox(key=(int(seed) % 2**64) * 2**64 + int(trial)))
