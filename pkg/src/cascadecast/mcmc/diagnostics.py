"""Convergence diagnostics."""
from __future__ import annotations

import numpy as np


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of an (n_chains, n) draw array.

    R-hat = sqrt(((n - 1)/n W + B/n) / W) with W the mean within-chain
    variance and B = n times the variance of the chain means.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    m, n = x.shape
    if n < 10:
        raise ValueError("gelman_rubin needs at least 10 draws per chain")
    means = x.mean(axis=1)
    W = float(x.var(axis=1, ddof=1).mean())
    B = n * float(means.var(ddof=1))
    if W == 0.0:
        if B == 0.0:
            return 1.0
        raise ValueError("zero within-chain variance with distinct chain values")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def rhat_table(samples) -> dict:
    """R-hat for every global parameter; NaN entries when only one chain exists."""
    if len(samples.chains) < 2:
        return {name: float("nan") for name in samples.param_names}
    return {name: gelman_rubin(samples.param(name)) for name in samples.param_names}
