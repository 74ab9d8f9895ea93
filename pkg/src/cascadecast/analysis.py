"""Exploratory analyses: log-normal ML fits, CCDFs, depth statistics,
correlation tests, the pooled logit regression and the Delta^x diagnostic."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from .data import Dataset, RetweetGraph


def ml_lognormal(S) -> tuple[float, float]:
    """(mean, biased standard deviation) of log reaction times."""
    x = np.log(np.asarray(S, dtype=np.float64))
    if x.size == 0:
        raise ValueError("ml_lognormal needs at least one reaction time")
    return float(x.mean()), float(x.std())


def delta_x(S) -> float:
    """(mean(log S) - median(log S)) / median(log S)."""
    x = np.log(np.asarray(S, dtype=np.float64))
    if x.size == 0:
        raise ValueError("delta_x needs reaction times")
    med = float(np.median(x))
    if med == 0.0:
        raise ValueError("delta_x undefined: median log reaction time is zero")
    return (float(x.mean()) - med) / med


def empirical_ccdf(S) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values s_(i) and the fraction of the sample strictly above each."""
    x = np.sort(np.asarray(S, dtype=np.float64))
    if x.size == 0:
        raise ValueError("empirical_ccdf needs data")
    n = x.size
    return x, 1.0 - np.arange(1, n + 1) / n


def lognormal_ccdf(alpha: float, tau: float) -> Callable[[np.ndarray], np.ndarray]:
    """s -> 1 - F(log s | alpha, tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return lambda s: special.ndtr((alpha - np.log(s)) / tau)


@dataclass(frozen=True)
class DepthStats:
    histogram: dict  # depth -> number of retweeters over the corpus
    fraction_deep: dict  # tweet id -> fraction of retweeters with depth > 1
    n_depth1: int
    n_deeper: int


def depth_stats(dataset) -> DepthStats:
    graphs = dataset.cascades if isinstance(dataset, Dataset) else list(dataset)
    hist: dict[int, int] = {}
    frac = {}
    n1 = deep = 0
    for g in graphs:
        d = g.depth[1:]
        for depth, count in zip(*np.unique(d, return_counts=True)):
            hist[int(depth)] = hist.get(int(depth), 0) + int(count)
        k1 = int(np.count_nonzero(d == 1))
        kd = int(np.count_nonzero(d > 1))
        n1 += k1
        deep += kd
        frac[g.tweet_id] = kd / d.size if d.size else 0.0
    return DepthStats(dict(sorted(hist.items())), frac, n1, deep)


@dataclass(frozen=True)
class Correlations:
    pearson_r: float
    pearson_p: float
    kendall_tau: float
    kendall_p: float


def correlations(x, y) -> Correlations:
    """Pearson r (t-test p-value) and Kendall tau-b (normal approximation)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("correlations need at least three pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlations undefined for a constant column")
    r, p = stats.pearsonr(x, y)
    tau, tp = stats.kendalltau(x, y, variant="b", method="asymptotic")
    return Correlations(float(r), float(p), float(tau), float(tp))


@dataclass(frozen=True)
class LogitRegression:
    coef: np.ndarray  # (beta0, beta_f, beta_d)
    se: np.ndarray
    p_values: np.ndarray
    n_used: int
    n_excluded_saturated: int  # vertices with M_j = f_j


def exploratory_logit_regression(dataset) -> LogitRegression:
    """OLS of logit(M_j / f_j) on (1, log(f_j + 1), log(d_j + 1)).

    Uses vertices with M_j >= 1; vertices with M_j = f_j have an infinite
    logit and are excluded and counted.
    """
    graphs = dataset.cascades if isinstance(dataset, Dataset) else list(dataset)
    M = np.concatenate([g.out_degree for g in graphs])
    f = np.concatenate([g.followers for g in graphs])
    d = np.concatenate([g.depth for g in graphs])
    keep = M >= 1
    saturated = keep & (M == f)
    use = keep & ~saturated
    n = int(use.sum())
    if n <= 3:
        raise ValueError("too few vertices with 1 <= M_j < f_j for the regression")
    y = special.logit(M[use] / f[use])
    X = np.column_stack([np.ones(n), np.log1p(f[use]), np.log1p(d[use])])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n - 3
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, 0.0)
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    return LogitRegression(coef, se, p, n, int(saturated.sum()))


@dataclass(frozen=True)
class TweetEda:
    tweet_id: str
    n_retweets: int
    alpha_ml: float
    tau_ml: float
    median_time: float
    delta: float
    fraction_deep: float


@dataclass(frozen=True)
class EdaReport:
    tweets: list
    depth: DepthStats
    correlations: object  # Correlations or None
    regression: object  # LogitRegression or None
    notes: list = field(default_factory=list)


def _tweet_eda(g: RetweetGraph) -> TweetEda:
    S = g.reaction_time[1:]
    a, t = ml_lognormal(S) if S.size else (float("nan"), float("nan"))
    try:
        dx = delta_x(S)
    except ValueError:
        dx = float("nan")
    med = float(np.median(g.times[1:])) if S.size else float("nan")
    frac = float(np.mean(g.depth[1:] > 1)) if S.size else 0.0
    return TweetEda(g.tweet_id, g.n_retweets, a, t, med, dx, frac)


def eda_report(dataset) -> EdaReport:
    graphs = dataset.cascades if isinstance(dataset, Dataset) else list(dataset)
    tweets = [_tweet_eda(g) for g in graphs]
    notes = []
    with_rt = [t for t in tweets if t.n_retweets >= 1]
    corr = None
    try:
        corr = correlations([t.median_time for t in with_rt], [t.n_retweets for t in with_rt])
    except ValueError as exc:
        notes.append(f"correlations skipped: {exc}")
    reg = None
    try:
        reg = exploratory_logit_regression(graphs)
    except ValueError as exc:
        notes.append(f"regression skipped: {exc}")
    return EdaReport(tweets, depth_stats(graphs), corr, reg, notes)
