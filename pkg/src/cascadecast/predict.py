"""Posterior-predictive forecasts of final cascade size."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import ObservedCascade

CAPTURE_NEVER = math.inf


@dataclass(frozen=True)
class PredictiveSummary:
    """Forecast of the step-ahead final size of one cascade."""

    tweet_id: str
    fraction: Optional[float]
    t_obs: float
    n_observed: int
    draws: np.ndarray
    median: float
    level: float
    lower: float
    upper: float
    true_total: Optional[int] = None

    def __post_init__(self):
        if not self.lower <= self.median <= self.upper:
            raise ValueError("interval must bracket the median")

    @property
    def covers_truth(self) -> bool:
        if self.true_total is None:
            raise ValueError("true total unknown")
        return self.lower <= self.true_total <= self.upper


def credible_interval(draws, level: float = 0.9) -> tuple[float, float]:
    """Equal-tailed interval with linear-interpolation (type 7) quantiles.

    When the tail mass (1 - level)/2 holds less than half a draw the interval
    is the sample range.
    """
    x = np.asarray(draws, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("credible_interval needs draws")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    if tail * x.size < 0.5:
        return float(x.min()), float(x.max())
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    return float(lo), float(hi)


def summarize(draws, tweet_id: str, n_observed: int, t_obs: float, fraction=None,
              level: float = 0.9, true_total: Optional[int] = None) -> PredictiveSummary:
    x = np.asarray(draws).ravel()
    lo, hi = credible_interval(x, level)
    med = float(np.median(x))
    return PredictiveSummary(
        tweet_id=tweet_id,
        fraction=fraction,
        t_obs=float(t_obs),
        n_observed=int(n_observed),
        draws=x,
        median=med,
        level=level,
        lower=lo,
        upper=hi,
        true_total=true_total,
    )


def predictive_total(samples, obs: ObservedCascade, level: float = 0.9) -> PredictiveSummary:
    """Distribution of sum_j M_pi(j) over the observed vertices, root included.

    ``samples`` is a :class:`~cascadecast.mcmc.PosteriorSamples`; draws of all
    chains are pooled.
    """
    try:
        totals = samples.totals(obs.tweet_id)
    except (KeyError, ValueError) as exc:
        raise KeyError(f"no predictive draws for tweet {obs.tweet_id}") from exc
    draws = totals.ravel()
    if draws.size == 0:
        raise KeyError(f"no predictive draws for tweet {obs.tweet_id}")
    if draws.min() < obs.n_observed:
        raise ValueError("a predictive draw is below the observed count")
    return summarize(draws, obs.tweet_id, obs.n_observed, obs.t_obs, obs.fraction, level, obs.true_total)


def time_to_capture(summaries: Sequence[PredictiveSummary], true_total: int) -> float:
    """Earliest observation time whose interval contains the true total."""
    times = [s.t_obs for s in summaries]
    if times != sorted(times):
        raise ValueError("summaries must be sorted by observation time")
    for s in summaries:
        if s.lower <= true_total <= s.upper:
            return s.t_obs
    return CAPTURE_NEVER
