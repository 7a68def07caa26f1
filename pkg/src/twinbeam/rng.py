"""Counter-based random streams.

Every stochastic draw in the package is keyed by ``(seed, *indices)`` so that
a trajectory can be regenerated in isolation, on any worker, in any order.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers, kept distinct so vacuum draws for the crystal input,
# object port and detector loss ports never share a key.
STREAM_VACUUM = 0
STREAM_OBJECT = 1
STREAM_LOSS1 = 2
STREAM_LOSS2 = 3
STREAM_BACKGROUND = 4
STREAM_POISSON = 5
STREAM_ORACLE = 6
STREAM_BOOTSTRAP = 7


def stream(seed: int, *indices: int) -> np.random.Generator:
    """Return an independent Philox generator for ``seed`` and ``indices``."""
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    key = [int(seed)] + [int(i) for i in indices]
    if any(k < 0 for k in key):
        raise ValueError(f"seed and indices must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def complex_normal(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circular complex Gaussian samples with ``E|z|^2 = variance``."""
    scale = np.sqrt(variance / 2.0)
    out = rng.standard_normal((2,) + tuple(shape))
    return scale * (out[0] + 1j * out[1])
