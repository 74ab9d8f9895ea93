"""Posterior sampling for the cascade model."""
from .sampler import (
    ChainSamples,
    ChainState,
    ConstraintViolation,
    Layout,
    PosteriorSamples,
    SamplerConfig,
    build_layout,
    run_chain,
    sample_posterior,
)

__all__ = [
    "ChainSamples",
    "ChainState",
    "ConstraintViolation",
    "Layout",
    "PosteriorSamples",
    "SamplerConfig",
    "build_layout",
    "run_chain",
    "sample_posterior",
]

from .diagnostics import gelman_rubin, rhat_table  # noqa: E402

__all__ += ["gelman_rubin", "rhat_table"]
