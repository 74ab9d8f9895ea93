"""Log-normal/binomial branching model of retweet cascades.

Each vertex j of a cascade retweets with reaction time S_j where
``log S_j ~ N(alpha_x, tau_x**2)`` and has ``M_j ~ Bi(f_j, b_j)`` children,
with ``logit(b_j) ~ N(mu_j, sigma_b**2)`` and
``mu_j = beta0 + beta_f*log(f_j + 1) + beta_d*log(d_j + 1)``.

Density conventions used throughout the package:

* reaction-time factors are normal densities of ``log S`` (no 1/S Jacobian);
* variances (sigma_delta^2, sigma_b^2, tau_x^2) carry the inverse-gamma
  priors, so joint densities are over variances;
* ``b_j`` is parameterised by its logit, and its prior is a normal density
  on that scale;
* ``a_tau`` has a log-normal prior, i.e. a normal density on log(a_tau)
  times the 1/a_tau Jacobian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple, fields
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .data import RetweetEvent, RetweetGraph, ObservedCascade, derive_structure

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GlobalParams:
    """Parameters shared by every cascade (standard deviations, not variances)."""

    alpha: float
    sigma_delta: float
    a_tau: float
    b_tau: float
    beta0: float
    beta_f: float
    beta_d: float
    sigma_b: float

    def __post_init__(self):
        for name in ("sigma_delta", "a_tau", "b_tau", "sigma_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


# Posterior means of the global parameters fitted to 52 Twitter cascades
# (all 52 observed in full).  Used as the ground truth of synthetic suites.
FITTED_GLOBALS = GlobalParams(
    alpha=7.42,
    sigma_delta=0.65,
    a_tau=0.45,
    b_tau=2.11,
    beta0=-4.61,
    beta_f=-0.28,
    beta_d=-8.22,
    sigma_b=1.69,
)


@dataclass(frozen=True)
class TweetParams:
    alpha_x: float
    tau_x: float  # standard deviation; tau_x**2 carries the IG prior

    def __post_init__(self):
        if not self.tau_x > 0:
            raise ValueError("tau_x must be positive")


@dataclass(frozen=True)
class UserParams:
    b: float
    M: int

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ValueError("b must lie in (0, 1)")
        if self.M < 0:
            raise ValueError("M must be non-negative")


@dataclass(frozen=True)
class Hyperpriors:
    mu_alpha: float = 0.0
    sigma_alpha: float = 100.0
    a_delta: float = 0.5
    b_delta: float = 0.5
    mu_a: float = 0.0
    sigma_a: float = 10.0
    k_b: float = 1.0
    theta_b: float = 500.0
    mu_beta: float = 0.0
    sigma_beta: float = 100.0
    a_sigma_b: float = 0.5
    b_sigma_b: float = 0.5
    # gamma prior on the global Poisson rate of the strawman model
    k_lambda: float = 1.0
    theta_lambda: float = 500.0

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("mu_"):
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"hyperparameter {f.name} must be positive")


# ---------------------------------------------------------------------------
# Elementary densities
# ---------------------------------------------------------------------------


def link_mean(f, d, beta0, beta_f, beta_d):
    """Mean of logit(b) for a user with ``f`` followers at depth ``d``."""
    return beta0 + beta_f * np.log1p(f) + beta_d * np.log1p(d)


def log_expit(x):
    """log(1 / (1 + exp(-x))), stable for large |x|."""
    return -np.logaddexp(0.0, -x)


def normal_logpdf(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(var) - LOG_SQRT_2PI


def invgamma_logpdf(x, shape, scale):
    """Inverse-gamma log-density with shape ``a`` and scale ``b``."""
    return shape * np.log(scale) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def gamma_logpdf(x, shape, scale):
    return (shape - 1.0) * np.log(x) - x / scale - special.gammaln(shape) - shape * np.log(scale)


def binom_logpmf_logit(M, f, logit_b):
    """log Bi(M | f, b) with b given on the logit scale."""
    M = np.asarray(M, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    logc = special.gammaln(f + 1.0) - special.gammaln(M + 1.0) - special.gammaln(f - M + 1.0)
    # M*log(b) + (f-M)*log(1-b); zero counts contribute nothing even when b saturates
    return (
        logc
        + np.where(M > 0, M * log_expit(logit_b), 0.0)
        + np.where(f > M, (f - M) * log_expit(-np.asarray(logit_b)), 0.0)
    )


def log_choose(n, k):
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return special.gammaln(n + 1.0) - special.gammaln(k + 1.0) - special.gammaln(n - k + 1.0)


def lognormal_logpdf(s, alpha_x, tau_x):
    """Normal log-density of ``log(s)`` with mean ``alpha_x`` and sd ``tau_x``."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("reaction times must be positive")
    z = (np.log(s) - alpha_x) / tau_x
    return -0.5 * z * z - np.log(tau_x) - LOG_SQRT_2PI


def lognormal_log_survival(u, alpha_x, tau_x):
    """log(1 - F(u)) for F the N(alpha_x, tau_x**2) CDF.

    ``u`` is a log-time; ``u = -inf`` (zero elapsed time) gives 0.  The
    upper tail uses the asymptotic expansion inside ``log_ndtr`` so that
    values far beyond ``alpha_x`` stay finite.
    """
    return special.log_ndtr((alpha_x - np.asarray(u, dtype=np.float64)) / tau_x)


def log_survival_elapsed(elapsed, alpha_x, tau_x):
    """Log-probability that a reaction time exceeds ``elapsed`` seconds."""
    with np.errstate(divide="ignore"):
        u = np.log(np.asarray(elapsed, dtype=np.float64))
    return lognormal_log_survival(u, alpha_x, tau_x)


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------


def _user_arrays(users: Sequence[UserParams]):
    b = np.array([u.b for u in users], dtype=np.float64)
    M = np.array([u.M for u in users], dtype=np.int64)
    return special.logit(b), M


def reaction_time_loglik(reaction_times, tweet: TweetParams) -> float:
    s = np.asarray(reaction_times, dtype=np.float64)
    if s.size == 0:
        return 0.0
    return float(np.sum(lognormal_logpdf(s, tweet.alpha_x, tweet.tau_x)))


def training_loglik(graph: RetweetGraph, tweet: TweetParams, users: Sequence[UserParams]) -> float:
    """Log-likelihood of a fully observed cascade.

    Sums the log-normal kernel of every non-root reaction time and the
    binomial log-pmf of every vertex's out-degree, root included.
    ``users`` is indexed by vertex; each ``M`` must equal the observed
    out-degree.
    """
    if not graph.is_derived:
        graph = derive_structure(graph)
    if len(users) != graph.n_vertices:
        raise ValueError("need one UserParams per vertex")
    logit_b, M = _user_arrays(users)
    if np.any(M != graph.out_degree):
        raise ValueError("training cascades must use their observed out-degrees")
    if np.any(M > graph.followers):
        raise ValueError("out-degree exceeds follower count")
    return reaction_time_loglik(graph.reaction_time[1:], tweet) + float(
        np.sum(binom_logpmf_logit(M, graph.followers, logit_b))
    )


def prediction_loglik(obs: ObservedCascade, tweet: TweetParams, M) -> float:
    """Log-likelihood of an observed prefix given the latent final degrees.

    ``M`` holds M_j for each vertex in ``obs.included`` order.  Each vertex
    contributes log C(M_j, m_j) + (M_j - m_j) log q_j, where q_j is the
    probability that a reaction time exceeds t^x - T_j; each observed
    non-root vertex also contributes its log-normal reaction-time term.
    """
    M = np.asarray(M, dtype=np.int64)
    m = obs.observed_degree
    if M.shape != m.shape:
        raise ValueError("need one latent degree per observed vertex")
    if np.any(M < m):
        raise ValueError("latent degree below observed degree")
    elapsed = obs.elapsed
    if np.any(elapsed < 0):
        raise ValueError("observation time precedes an included retweet")
    k = M - m
    log_q = log_survival_elapsed(elapsed, tweet.alpha_x, tweet.tau_x)
    censored = np.where(k > 0, k * log_q, 0.0)
    return (
        reaction_time_loglik(obs.reaction_times, tweet)
        + float(np.sum(log_choose(M, m)))
        + float(np.sum(censored))
    )


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def log_prior(g: GlobalParams, hp: Hyperpriors = Hyperpriors()) -> float:
    """Hyperprior log-density of the global parameters (variance scale)."""
    lp = normal_logpdf(g.alpha, hp.mu_alpha, hp.sigma_alpha**2)
    lp += invgamma_logpdf(g.sigma_delta**2, hp.a_delta, hp.b_delta)
    lp += normal_logpdf(math.log(g.a_tau), hp.mu_a, hp.sigma_a**2) - math.log(g.a_tau)
    lp += gamma_logpdf(g.b_tau, hp.k_b, hp.theta_b)
    for beta in (g.beta0, g.beta_f, g.beta_d):
        lp += normal_logpdf(beta, hp.mu_beta, hp.sigma_beta**2)
    lp += invgamma_logpdf(g.sigma_b**2, hp.a_sigma_b, hp.b_sigma_b)
    return float(lp)


def log_tweet_prior(tweet: TweetParams, g: GlobalParams) -> float:
    return float(
        normal_logpdf(tweet.alpha_x, g.alpha, g.sigma_delta**2)
        + invgamma_logpdf(tweet.tau_x**2, g.a_tau, g.b_tau)
    )


def log_user_prior(user: UserParams, mu: float, sigma_b: float, f: int) -> float:
    """log N(logit b | mu, sigma_b^2) + log Bi(M | f, b)."""
    if user.M > f:
        raise ValueError("M exceeds follower count")
    lb = special.logit(user.b)
    return float(normal_logpdf(lb, mu, sigma_b**2) + binom_logpmf_logit(user.M, f, lb))


def log_posterior(
    g: GlobalParams,
    training: Sequence[tuple[RetweetGraph, TweetParams, Sequence[UserParams]]] = (),
    prediction: Sequence[tuple[ObservedCascade, TweetParams, Sequence[UserParams]]] = (),
    hp: Hyperpriors = Hyperpriors(),
) -> float:
    """Unnormalised joint log-density of parameters and latent degrees.

    Sum of independent factors: hyperpriors, tweet priors, per-user priors
    (logit-normal and binomial), reaction times of training cascades and the
    censored likelihood of prediction prefixes.  Users of prediction
    cascades are given in ``obs.included`` order.
    """
    total = log_prior(g, hp)
    for graph, tweet, users in training:
        total += log_tweet_prior(tweet, g)
        mu = link_mean(graph.followers, graph.depth, g.beta0, g.beta_f, g.beta_d)
        for j, u in enumerate(users):
            if u.M != graph.out_degree[j]:
                raise ValueError("training cascades must use their observed out-degrees")
            total += log_user_prior(u, mu[j], g.sigma_b, graph.followers[j])
        total += reaction_time_loglik(graph.reaction_time[1:], tweet)
    for obs, tweet, users in prediction:
        total += log_tweet_prior(tweet, g)
        mu = link_mean(obs.followers, obs.depth, g.beta0, g.beta_f, g.beta_d)
        for j, u in enumerate(users):
            total += log_user_prior(u, mu[j], g.sigma_b, obs.followers[j])
        total += prediction_loglik(obs, tweet, [u.M for u in users])
    return float(total)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

_MAX_LOG_SECONDS = 700.0


class SimulationOverflowError(OverflowError):
    """A simulated absolute time exceeded the floating-point range."""


FollowerSampler = Callable[[np.random.Generator, int], int]


def lognormal_followers(log_mean: float = 6.0, log_sd: float = 2.0) -> FollowerSampler:
    """Follower counts floor(exp(N(log_mean, log_sd^2))), independent of depth."""

    def sample(rng: np.random.Generator, depth: int) -> int:
        return int(math.floor(rng.lognormal(log_mean, log_sd)))

    return sample


def root_boosted_followers(
    root_log_mean: float = 12.0,
    root_log_sd: float = 1.0,
    log_mean: float = 6.0,
    log_sd: float = 2.0,
) -> FollowerSampler:
    """Like :func:`lognormal_followers` but with a separate law for the root.

    Roots of observed cascades are typically much better followed than the
    retweeters.
    """

    def sample(rng: np.random.Generator, depth: int) -> int:
        if depth == 0:
            return int(math.floor(rng.lognormal(root_log_mean, root_log_sd)))
        return int(math.floor(rng.lognormal(log_mean, log_sd)))

    return sample


def simulate_cascade(
    g: GlobalParams,
    follower_sampler: Optional[FollowerSampler] = None,
    rng: Optional[np.random.Generator] = None,
    max_nodes: int = 10_000,
    tweet_id: str = "sim",
) -> RetweetGraph:
    """Draw one cascade from the generative branching process.

    Vertices are expanded breadth first.  Generation stops when every leaf
    has drawn zero children or when ``max_nodes`` vertices exist, in which
    case ``meta["truncated"]`` is True and pending children are dropped.
    Very large tau_x can produce reaction times beyond the double range;
    the draw then raises :class:`SimulationOverflowError`.
    The returned graph is derived; ``meta`` records ``alpha_x``, ``tau_x``
    and the per-vertex ``logit_b`` draws.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be at least 1")
    if rng is None:
        rng = np.random.default_rng()
    if follower_sampler is None:
        follower_sampler = lognormal_followers()

    alpha_x = rng.normal(g.alpha, g.sigma_delta)
    tau2 = g.b_tau / rng.gamma(g.a_tau)
    tau_x = math.sqrt(tau2)

    followers = [follower_sampler(rng, 0)]
    depth = [0]
    times = [0.0]
    parents = [-1]
    logit_b = []
    truncated = False
    head = 0
    while head < len(followers):
        j = head
        head += 1
        mu = link_mean(followers[j], depth[j], g.beta0, g.beta_f, g.beta_d)
        lb = rng.normal(mu, g.sigma_b)
        logit_b.append(lb)
        n_children = int(rng.binomial(followers[j], special.expit(lb)))
        if n_children == 0:
            continue
        room = max_nodes - len(followers)
        if n_children > room:
            truncated = True
            n_children = room
        for _ in range(n_children):
            log_s = rng.normal(alpha_x, tau_x)
            t = times[j] + math.exp(log_s) if log_s < _MAX_LOG_SECONDS else math.inf
            if not math.isfinite(t):
                raise SimulationOverflowError(
                    f"reaction time exp({log_s:.1f}) s is not representable (tau_x={tau_x:.3g})"
                )
            times.append(t)
            parents.append(j)
            depth.append(depth[j] + 1)
            followers.append(follower_sampler(rng, depth[j] + 1))
        if truncated:
            break

    uid = [f"{tweet_id}-u{i}" for i in range(len(followers))]
    root = RetweetEvent(uid[0], 0, None, followers[0])
    order = sorted(range(1, len(followers)), key=lambda i: times[i])
    events = tuple(RetweetEvent(uid[i], times[i], uid[parents[i]], followers[i]) for i in order)
    # vertices never expanded because of truncation have no logit_b draw
    logit_b += [math.nan] * (len(followers) - len(logit_b))
    vertex_logit_b = np.array([logit_b[0]] + [logit_b[i] for i in order])
    graph = RetweetGraph(
        tweet_id=tweet_id,
        root=root,
        events=events,
        meta={
            "alpha_x": alpha_x,
            "tau_x": tau_x,
            "truncated": truncated,
            "logit_b": vertex_logit_b,
        },
    )
    return derive_structure(graph)


def simulate_corpus(
    n: int,
    g: GlobalParams,
    follower_sampler: Optional[FollowerSampler] = None,
    rng: Optional[np.random.Generator] = None,
    min_size: int = 0,
    max_size: Optional[int] = None,
    max_nodes: int = 10_000,
    prefix: str = "sim",
) -> list[RetweetGraph]:
    """``n`` cascades with final size in [min_size, max_size].

    Draws that overflow or fall outside the size window are discarded and
    redrawn, so the result follows the generative law conditioned on the
    window.  Tweet ids are ``{prefix}{k}``.
    """
    if rng is None:
        rng = np.random.default_rng()
    out: list[RetweetGraph] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 * max(n, 1):
            raise RuntimeError("size window too narrow: no acceptable cascade drawn")
        try:
            graph = simulate_cascade(g, follower_sampler, rng, max_nodes, tweet_id=f"{prefix}{len(out)}")
        except SimulationOverflowError:
            continue
        size = graph.n_retweets
        if size < min_size or (max_size is not None and size > max_size):
            continue
        out.append(graph)
    return out
