"""Counter-based random streams for reproducible parallel sampling.

Every (chain, phase, iteration) triple owns a Philox stream: the key
encodes the run seed and chain id, the counter encodes phase and
iteration.  Local updates draw one row of uniforms per unit (tweet or
vertex) from the stream of their phase, so a unit's random numbers depend
only on its index, never on how units are split among workers.
"""
from __future__ import annotations

import numpy as np
from scipy import special

PHASE_INIT = 0
PHASE_GLOBAL = 1
PHASE_TWEET = 2
PHASE_VERTEX = 3

_MASK64 = (1 << 64) - 1
_HALF_ULP = 2.0**-54


def stream(seed: int, chain: int, phase: int, iteration: int) -> np.random.Generator:
    """Generator for one (chain, phase, iteration) block."""
    key = [seed & _MASK64, chain & _MASK64]
    counter = [0, 0, phase, iteration]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def open_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    return rng.random(shape) + _HALF_ULP


def std_normal(u):
    """Standard normal quantile of uniforms."""
    return special.ndtri(u)
