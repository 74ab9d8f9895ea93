"""Benchmark forecasters, the nested strawman model and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .data import Dataset, RetweetGraph
from .mcmc.sampler import STRAWMAN, PosteriorSamples, SamplerConfig, complete_loglik, sample_posterior
from .model import Hyperpriors
from .predict import PredictiveSummary, predictive_total

SZABO_STEP = 60.0
DP_BIN = 300.0
NAIVE_FACTOR = 1.4


@dataclass(frozen=True)
class BenchmarkFit:
    kind: str
    params: dict
    summary: dict = field(default_factory=dict)


def _training_graphs(training) -> list[RetweetGraph]:
    if isinstance(training, Dataset):
        return training.training if training.roles else list(training.cascades)
    return list(training)


# ---------------------------------------------------------------------------
# Follower-count regression
# ---------------------------------------------------------------------------


def fit_follower_regression(training) -> BenchmarkFit:
    """Least squares of log M^x on log f_0^x over training cascades."""
    graphs = [g for g in _training_graphs(training) if g.root.followers >= 1 and g.n_retweets >= 1]
    if len(graphs) < 2:
        raise ValueError("follower regression needs two cascades with f0 >= 1 and M >= 1")
    x = np.log([g.root.followers for g in graphs])
    y = np.log([g.n_retweets for g in graphs])
    if np.ptp(x) == 0:
        raise ValueError("degenerate design: all root follower counts are equal")
    X = np.column_stack([np.ones_like(x), x])
    (b0, b1), *_ = np.linalg.lstsq(X, y, rcond=None)
    return BenchmarkFit("follower-regression", {"beta0": float(b0), "beta1": float(b1)},
                        {"n_training": len(graphs)})


def predict_follower_regression(fit: BenchmarkFit, root_followers) -> np.ndarray:
    return np.exp(fit.params["beta0"] + fit.params["beta1"] * np.log(root_followers))


# ---------------------------------------------------------------------------
# Szabo-Huberman log-linear model
# ---------------------------------------------------------------------------


def fit_szabo(training, step: float = SZABO_STEP) -> BenchmarkFit:
    """beta(t) = mean over training tweets of log M^x - log m^x(t).

    The grid runs in ``step`` (one-minute) increments from ``step`` up to
    the first multiple of ``step`` at or beyond the longest training
    lifetime, so beta is exactly zero at its last point.  Simulated
    lifetimes can be astronomically long, so the fit keeps the training
    arrival times and beta is evaluated on demand (:func:`szabo_beta`).
    """
    graphs = [g for g in _training_graphs(training) if g.n_retweets >= 1]
    if not graphs:
        raise ValueError("Szabo fit needs training cascades with retweets")
    end = math.ceil(max(g.lifetime for g in graphs) / step) * step
    return BenchmarkFit(
        "szabo",
        {"step": float(step), "end": float(end),
         "times": [np.sort(g.times[1:]) for g in graphs],
         "sizes": np.array([g.n_retweets for g in graphs], dtype=np.float64)},
        {"n_training": len(graphs)},
    )


def szabo_grid(fit: BenchmarkFit, limit: int = 1_000_000) -> np.ndarray:
    """All grid times of a Szabo fit (refuses grids longer than ``limit``)."""
    n = int(round(fit.params["end"] / fit.params["step"]))
    if n > limit:
        raise ValueError(f"Szabo grid has {n} points; evaluate szabo_beta at chosen times instead")
    return np.arange(1, n + 1) * fit.params["step"]


def szabo_beta(fit: BenchmarkFit, t) -> np.ndarray:
    """beta at grid times ``t``; NaN where no training tweet has a retweet by then."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    logs = np.zeros(t.size)
    counts = np.zeros(t.size, dtype=np.int64)
    for times, size in zip(fit.params["times"], fit.params["sizes"]):
        m = np.searchsorted(times, t, side="right")
        ok = m >= 1
        logs[ok] += math.log(size) - np.log(m[ok])
        counts += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, logs / np.maximum(counts, 1), np.nan)


def predict_szabo(fit: BenchmarkFit, m, t: float) -> float:
    """exp(beta(t)) * m with t snapped to the nearest grid point."""
    step, end = fit.params["step"], fit.params["end"]
    k = min(max(round(t / step), 1), round(end / step))
    beta = float(szabo_beta(fit, k * step)[0])
    if math.isnan(beta):
        raise ValueError(f"beta(t) undefined at grid time {k * step}: no training tweet had retweets")
    return float(m * math.exp(beta))


# ---------------------------------------------------------------------------
# Dynamic Poisson model
# ---------------------------------------------------------------------------


def bin_counts(times, t_end: Optional[float] = None, width: float = DP_BIN) -> np.ndarray:
    """Event counts in bins [k w, (k+1) w) up to the last non-empty bin."""
    t = np.asarray(times, dtype=np.float64)
    if t_end is not None:
        t = t[t <= t_end]
    if t.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(np.floor(t / width).astype(np.int64))


def _profile_negloglik(delta: float, n: np.ndarray) -> float:
    k = np.arange(n.size)
    s = float(np.sum(delta**k))
    lam = n.sum() / s
    return -(float(np.sum(n * (math.log(lam) + k * math.log(delta)))) - lam * s)


def fit_dynamic_poisson(counts, width: float = DP_BIN) -> BenchmarkFit:
    """ML fit of n_k ~ Poisson(lambda delta^k) with lambda profiled out.

    ``boundary`` is set when the counts do not identify delta (fewer than
    two non-empty bins) or the optimum sits at an end of (0, 1).
    """
    n = np.asarray(counts, dtype=np.float64)
    if n.size == 0 or n.sum() == 0:
        raise ValueError("dynamic Poisson fit needs at least one event")
    lo, hi = 1e-9, 1.0 - 1e-9
    res = optimize.minimize_scalar(_profile_negloglik, bounds=(lo, hi), args=(n,),
                                   method="bounded", options={"xatol": 1e-10})
    delta = float(res.x)
    lam = float(n.sum() / np.sum(delta ** np.arange(n.size)))
    boundary = bool(np.count_nonzero(n) < 2 or delta < 1e-6 or delta > 1 - 1e-6)
    return BenchmarkFit("dynamic-poisson", {"lambda": lam, "delta": delta, "bin": width},
                        {"boundary": boundary, "n_bins": int(n.size)})


def predict_dp_remaining(fit: BenchmarkFit, elapsed: float) -> float:
    """Expected events after the bin containing ``elapsed``: lambda delta^(K+1)/(1 - delta)."""
    lam, delta = fit.params["lambda"], fit.params["delta"]
    K = int(math.floor(elapsed / fit.params["bin"]))
    return float(lam * delta ** (K + 1) / (1.0 - delta))


def dp_forecast(obs) -> float:
    """Dynamic-Poisson forecast of the final size from an observed prefix."""
    times = obs.graph.times[obs.included[1:]]
    fit = fit_dynamic_poisson(bin_counts(times, obs.t_obs))
    return obs.n_observed + predict_dp_remaining(fit, obs.t_obs)


# ---------------------------------------------------------------------------
# Strawman and naive models
# ---------------------------------------------------------------------------


def fit_strawman(dataset: Dataset, config: SamplerConfig = SamplerConfig(),
                 hp: Hyperpriors = Hyperpriors(), workers: int = 1) -> PosteriorSamples:
    """Posterior of the nested model with M_j ~ Poisson(lambda)."""
    return sample_posterior(dataset, replace(config, model=STRAWMAN), hp, workers)


def strawman_predict(samples: PosteriorSamples, obs, level: float = 0.9) -> PredictiveSummary:
    return predictive_total(samples, obs, level)


def naive_predict(m):
    return NAIVE_FACTOR * m


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def ape(pred: float, true: float) -> float:
    """Absolute percent error."""
    if true == 0:
        raise ValueError("APE undefined for a zero true value")
    return 100.0 * abs(pred - true) / true


def remaining_ape(pred: float, true: float, m: float) -> float:
    """APE of the remaining count: |pred - true| / (true - m)."""
    if true == m:
        raise ValueError("remaining-count APE undefined when nothing remains")
    return 100.0 * abs(pred - true) / (true - m)


def mape(pairs: Iterable[tuple[float, float]]) -> float:
    """Median APE of (prediction, truth) pairs."""
    errors = [ape(p, t) for p, t in pairs]
    if not errors:
        raise ValueError("mape needs at least one pair")
    return float(np.median(errors))


def avg_loglik(samples: PosteriorSamples, dataset: Optional[Dataset] = None) -> float:
    """Posterior mean of the complete-data log-likelihood."""
    return float(np.mean(samples.loglik()))


def _plugin_loglik(samples: PosteriorSamples) -> float:
    means = [c.means for c in samples.chains]
    avg = lambda key: np.mean([m[key] for m in means], axis=0)  # noqa: E731
    b = np.clip(avg("b"), 1e-300, 1.0 - 1e-16)
    return complete_loglik(
        samples.layout, samples.config.model, avg("alpha_x"), avg("tau2"),
        np.rint(avg("M")).astype(np.int64), special.logit(b), float(avg("lam")),
    )


def dic(samples: PosteriorSamples, dataset: Optional[Dataset] = None) -> float:
    """DIC = Dbar + pD with pD = Dbar - D(posterior means)."""
    d_bar = -2.0 * avg_loglik(samples)
    p_d = d_bar - (-2.0 * _plugin_loglik(samples))
    return d_bar + p_d
