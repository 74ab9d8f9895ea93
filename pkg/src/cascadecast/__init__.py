"""Bayesian forecasting of retweet cascades.

Hierarchical model with log-normal reaction times and covariate-driven
binomial branching, fitted by Metropolis-within-Gibbs sampling.
"""
from .data import (
    CascadeDataError,
    Dataset,
    ObservedCascade,
    RetweetEvent,
    RetweetGraph,
    derive_structure,
    load_dataset,
    make_dataset,
    observation_prefix,
    observe_until,
    partition,
    save_dataset,
)
from .mcmc import PosteriorSamples, SamplerConfig, gelman_rubin, run_chain, sample_posterior
from .model import FITTED_GLOBALS, GlobalParams, Hyperpriors, simulate_cascade, simulate_corpus
from .predict import PredictiveSummary, credible_interval, predictive_total, time_to_capture

__version__ = "0.1.0"
