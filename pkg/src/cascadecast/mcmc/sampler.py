"""Metropolis-within-Gibbs sampler over the cascade posterior.

One sweep has three phases:

1. global parameters, updated one after another;
2. per-tweet (alpha_x, then tau_x^2), independent across tweets;
3. per-vertex (b_j, then M_j for partially observed tweets), independent
   across vertices.

Phases 2 and 3 read only the state left by the previous phase, so their
units can be split into chunks and processed concurrently.  Random numbers
come from counter-based streams indexed by unit, which makes the output
independent of the number of workers.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from ..data import Dataset, PREDICTION, TRAINING
from ..model import LOG_SQRT_2PI, GlobalParams, Hyperpriors, binom_logpmf_logit, log_choose, log_expit
from . import conditionals as cond
from .rng import PHASE_GLOBAL, PHASE_INIT, PHASE_TWEET, PHASE_VERTEX, open_uniforms, stream

log = logging.getLogger(__name__)

FULL = "full"
STRAWMAN = "strawman"
PAPER = "paper"
COLLAPSED = "collapsed"

FULL_PARAMS = ("alpha", "sigma_delta", "a_tau", "b_tau", "beta0", "beta_f", "beta_d", "sigma_b")
STRAWMAN_PARAMS = ("alpha", "sigma_delta", "a_tau", "b_tau", "lambda")


class ConstraintViolation(AssertionError):
    """A latent degree left the range m_j <= M_j <= f_j."""


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 3000
    burn_in: int = 1000
    n_chains: int = 3
    rw_step_a_tau: float = 0.2
    rw_step_alpha_x: float = 0.2
    thinning: int = 1
    seed: int = 0
    model: str = FULL
    # "mh": independence Metropolis with Bi(f, b) proposals; "exact": thinned-binomial draw
    offspring_update: str = "mh"
    # after the random-walk step, prediction alpha_x also gets an independence
    # step proposing from the conjugate normal given the observed times
    alpha_x_independence: bool = True
    # "paper": tweet and b updates condition on the latent degrees M_j.
    # "collapsed": they use the M-marginal posterior and M_j is then drawn
    # exactly from its conditional (a blocked Gibbs step over (theta, M)).
    scheme: str = "paper"
    # non-centred random-walk moves of (beta, sigma_b^2) per sweep, carrying
    # the logits along (0 disables); see conditionals.link_mh
    link_moves: int = 2
    # after the independence step, logit(b_j) also gets a random-walk step
    # with data-based size 2.4 / sqrt(m_j + 1)
    b_random_walk: bool = True
    store_latent: bool = False
    check_constraints: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thinning < 1 or self.n_chains < 1:
            raise ValueError("thinning and n_chains must be positive")
        if self.rw_step_a_tau <= 0 or self.rw_step_alpha_x <= 0:
            raise ValueError("random-walk steps must be positive")
        if self.model not in (FULL, STRAWMAN):
            raise ValueError(f"unknown model {self.model!r}")
        if self.scheme not in (PAPER, COLLAPSED):
            raise ValueError(f"unknown sampling scheme {self.scheme!r}")
        if self.link_moves < 0:
            raise ValueError("link_moves must be non-negative")
        if self.offspring_update not in ("mh", "exact"):
            raise ValueError(f"unknown offspring update {self.offspring_update!r}")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iterations, self.thinning))


# ---------------------------------------------------------------------------
# Flattened data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Layout:
    """Dataset flattened into arrays.

    Vertices are grouped by tweet (``v_start`` offsets).  Training tweets
    list all vertices in index order; prediction tweets list their observed
    vertices in arrival order.  Reaction times are grouped the same way
    (``s_start`` offsets).
    """

    tweet_ids: tuple[str, ...]
    is_pred: np.ndarray
    v_start: np.ndarray
    v_tweet: np.ndarray
    vertex: np.ndarray  # vertex index inside its graph
    f: np.ndarray
    X: np.ndarray
    gram: np.ndarray
    m: np.ndarray
    s_start: np.ndarray
    log_s: np.ndarray
    n_s: np.ndarray
    sum_log_s: np.ndarray
    pred_vertices: np.ndarray
    log_elapsed: np.ndarray  # aligned with pred_vertices
    pred_tweets: np.ndarray
    true_total: np.ndarray  # final M^x when known, else -1

    @property
    def n_tweets(self) -> int:
        return len(self.tweet_ids)

    @property
    def n_vertices(self) -> int:
        return int(self.v_start[-1])

    def tweet_index(self, tweet_id: str) -> int:
        return self.tweet_ids.index(tweet_id)

    def vertex_slice(self, t: int) -> slice:
        return slice(int(self.v_start[t]), int(self.v_start[t + 1]))

    def pred_slice(self, t: int) -> slice:
        """Columns of ``pred_vertices`` belonging to tweet ``t``."""
        lo = np.searchsorted(self.pred_vertices, self.v_start[t])
        hi = np.searchsorted(self.pred_vertices, self.v_start[t + 1])
        return slice(int(lo), int(hi))


def build_layout(dataset: Dataset) -> Layout:
    """Flatten a partitioned dataset; prediction tweets need observations."""
    tweet_ids, is_pred, v_counts, vertex, f, d, m = [], [], [], [], [], [], []
    log_s, n_s, elapsed, true_total = [], [], [], []
    for g in dataset.cascades:
        role = dataset.roles.get(g.tweet_id)
        if role is None:
            raise ValueError(f"tweet {g.tweet_id} has no training/prediction role")
        if not g.is_derived:
            raise ValueError("dataset must be derived before sampling")
        tweet_ids.append(g.tweet_id)
        if role == TRAINING:
            idx = np.arange(g.n_vertices)
            is_pred.append(False)
            m.append(g.out_degree)
            s = g.reaction_time[1:]
        elif role == PREDICTION:
            obs = dataset.observations.get(g.tweet_id)
            if obs is None:
                raise ValueError(f"prediction tweet {g.tweet_id} has no observed prefix")
            idx = obs.included
            is_pred.append(True)
            m.append(obs.observed_degree)
            s = obs.reaction_times
            elapsed.append(obs.elapsed)
        else:
            raise ValueError(f"unknown role {role!r}")
        vertex.append(idx)
        v_counts.append(len(idx))
        f.append(g.followers[idx])
        d.append(g.depth[idx])
        log_s.append(np.log(s))
        n_s.append(len(s))
        true_total.append(g.n_retweets)

    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
    v_start = np.concatenate([[0], np.cumsum(v_counts)]).astype(np.int64)
    T = len(tweet_ids)
    v_tweet = np.repeat(np.arange(T), v_counts)
    f_all = cat(f, np.int64)
    X = cond.design_matrix(f_all, cat(d, np.int64))
    is_pred_arr = np.array(is_pred, dtype=bool)
    pred_mask = is_pred_arr[v_tweet] if T else np.zeros(0, bool)
    s_all = cat(log_s, np.float64)
    s_start = np.concatenate([[0], np.cumsum(n_s)]).astype(np.int64)
    s_tweet = np.repeat(np.arange(T), n_s)
    with np.errstate(divide="ignore"):
        log_el = np.log(cat(elapsed, np.float64))
    return Layout(
        tweet_ids=tuple(tweet_ids),
        is_pred=is_pred_arr,
        v_start=v_start,
        v_tweet=v_tweet,
        vertex=cat(vertex, np.int64),
        f=f_all,
        X=X,
        gram=X.T @ X,
        m=cat(m, np.int64),
        s_start=s_start,
        log_s=s_all,
        n_s=np.array(n_s, dtype=np.float64),
        sum_log_s=np.bincount(s_tweet, weights=s_all, minlength=T),
        pred_vertices=np.flatnonzero(pred_mask),
        log_elapsed=log_el,
        pred_tweets=np.flatnonzero(is_pred_arr),
        true_total=np.array(true_total, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Chain state
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    """Mutable state of one chain (variances for the variance-type parameters)."""

    alpha: float
    sigma_delta2: float
    a_tau: float
    b_tau: float
    beta: np.ndarray
    sigma_b2: float
    lam: float
    alpha_x: np.ndarray
    tau2: np.ndarray
    logit_b: np.ndarray
    M: np.ndarray
    iteration: int = 0
    # fixed per chain: vertices kept centred by the link move (see initial_state)
    link_centred: Optional[np.ndarray] = None

    def global_params(self) -> GlobalParams:
        return GlobalParams(
            alpha=self.alpha,
            sigma_delta=math.sqrt(self.sigma_delta2),
            a_tau=self.a_tau,
            b_tau=self.b_tau,
            beta0=float(self.beta[0]),
            beta_f=float(self.beta[1]),
            beta_d=float(self.beta[2]),
            sigma_b=math.sqrt(self.sigma_b2),
        )

    def record(self, model: str) -> np.ndarray:
        common = [self.alpha, math.sqrt(self.sigma_delta2), self.a_tau, self.b_tau]
        if model == STRAWMAN:
            return np.array(common + [self.lam])
        return np.array(common + list(self.beta) + [math.sqrt(self.sigma_b2)])


def _ml_tweet_estimates(layout: Layout):
    """Per-tweet ML (mean, variance) of log reaction times.

    Only fully observed tweets with at least two distinct reaction times get
    estimates: the observed prefix of a prediction tweet holds the earliest
    arrivals only, and its naive ML estimate is biased towards short times.
    """
    T = layout.n_tweets
    alpha_ml = np.full(T, np.nan)
    tau2_ml = np.full(T, np.nan)
    for t in np.flatnonzero(~layout.is_pred):
        s = layout.log_s[layout.s_start[t] : layout.s_start[t + 1]]
        if s.size >= 2 and np.var(s) > 0:
            alpha_ml[t] = s.mean()
            tau2_ml[t] = np.var(s)
    return alpha_ml, tau2_ml


def initial_state(layout: Layout, config: SamplerConfig, chain_id: int, hp: Hyperpriors) -> ChainState:
    """Dispersed starting point for chain ``chain_id``.

    Training tweets start at their ML estimates (when they have two or more
    distinct reaction times); other tweets start at the pooled values.  Global
    parameters start at moment estimates perturbed with a spread that grows
    as (chain_id / 2); vertex logits start at smoothed empirical rates
    perturbed the same way (prediction vertices at the link mean), and latent
    degrees at their conditional mean given those values.
    """
    rng = stream(config.seed, chain_id, PHASE_INIT, 0)
    spread = chain_id / 2.0
    alpha_ml, tau2_ml = _ml_tweet_estimates(layout)
    ok = np.isfinite(alpha_ml)
    if ok.sum() >= 2:
        # robust location/scale: tweets with few, widely spread reaction
        # times give wild ML estimates
        a_mean = float(np.median(alpha_ml[ok]))
        a_sd = float(stats.median_abs_deviation(alpha_ml[ok], scale="normal"))
        t_mean = float(np.median(tau2_ml[ok]))
    elif layout.log_s.size >= 2:
        a_mean, a_sd, t_mean = float(layout.log_s.mean()), 1.0, max(float(layout.log_s.var()), 1e-2)
    else:
        a_mean, a_sd, t_mean = hp.mu_alpha, 1.0, 1.0
    a_sd = max(a_sd, 0.1)

    alpha = a_mean + spread * a_sd * rng.standard_normal()
    sigma_delta2 = (a_sd * math.exp(spread * 0.5 * rng.standard_normal())) ** 2
    alpha_x = np.where(ok, alpha_ml, alpha)
    tau2 = np.where(ok, tau2_ml, t_mean)
    # inverse-gamma moment match with shape 2 as a neutral default
    a_tau = 2.0 * math.exp(spread * 0.5 * rng.standard_normal())
    b_tau = t_mean * (a_tau + 1.0) * math.exp(spread * 0.5 * rng.standard_normal())

    V = layout.n_vertices
    f = layout.f
    m = layout.m
    # smoothed empirical rates; prediction vertices are censored, so the link
    # regression uses training vertices when there are any and prediction
    # vertices start at the link mean instead
    logit_b = special.logit((m + 0.5) / (f + 1.0))
    pv = layout.pred_vertices
    fit_rows = np.ones(V, dtype=bool)
    fit_rows[pv] = False
    if not fit_rows.any():
        fit_rows[:] = True
    if V:
        beta, *_ = np.linalg.lstsq(layout.X[fit_rows], logit_b[fit_rows], rcond=None)
        sigma_b2 = max(float(np.var(logit_b[fit_rows] - layout.X[fit_rows] @ beta)), 0.25)
    else:
        beta, sigma_b2 = np.zeros(3), 1.0
    beta = beta + spread * rng.standard_normal(3) * np.array([0.5, 0.05, 0.5])
    sigma_b2 *= math.exp(spread * 0.5 * rng.standard_normal())
    logit_b[pv] = layout.X[pv] @ beta
    logit_b = logit_b + spread * math.sqrt(sigma_b2) * 0.5 * rng.standard_normal(V)

    # latent degrees start at their conditional mean given the starting
    # (alpha_x, tau_x, b): m_j + (f_j - m_j) b q / (b q + 1 - b)
    M = m.copy()
    t_of = layout.v_tweet[pv]
    log_q = special.log_ndtr((alpha_x[t_of] - layout.log_elapsed) / np.sqrt(tau2[t_of]))
    lb = logit_b[pv]
    p = np.exp(log_expit(lb) + log_q - cond.log_one_minus_b_cdf(lb, log_q))
    M[pv] = m[pv] + np.rint((f[pv] - m[pv]) * p).astype(np.int64)

    lam = max(float(m.mean()) if V else 1.0, 1e-3) * math.exp(spread * 0.5 * rng.standard_normal())
    # The link move keeps a vertex's logit centred when its data outweigh the
    # prior (observed retweets, or binomial information f b (1 - b) at the
    # starting link mean above the prior precision 1 / sigma_b^2) and
    # carries the others along.  Fixed for the whole chain.
    mu0 = layout.X @ beta
    info = f * special.expit(mu0) * special.expit(-mu0)
    link_centred = (m > 0) | (info * sigma_b2 > 1.0)
    return ChainState(
        alpha=float(alpha),
        sigma_delta2=float(sigma_delta2),
        a_tau=float(a_tau),
        b_tau=float(b_tau),
        beta=np.asarray(beta, dtype=np.float64),
        sigma_b2=float(sigma_b2),
        lam=float(lam),
        alpha_x=alpha_x.astype(np.float64),
        tau2=tau2.astype(np.float64),
        logit_b=logit_b.astype(np.float64),
        M=M,
        link_centred=link_centred,
    )


# ---------------------------------------------------------------------------
# Acceptance bookkeeping
# ---------------------------------------------------------------------------

MH_FAMILIES = ("link", "a_tau", "alpha_x", "alpha_x_ind", "tau_x", "b", "b_rw", "M")


@dataclass
class AcceptanceTally:
    accepted: dict = field(default_factory=lambda: {k: 0 for k in MH_FAMILIES})
    proposed: dict = field(default_factory=lambda: {k: 0 for k in MH_FAMILIES})

    def add(self, family: str, accepted, n: Optional[int] = None):
        acc = np.asarray(accepted)
        self.accepted[family] += int(acc.sum())
        self.proposed[family] += int(acc.size if n is None else n)

    def rate(self, family: str) -> float:
        p = self.proposed[family]
        return self.accepted[family] / p if p else float("nan")


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def update_globals(state: ChainState, layout: Layout, hp: Hyperpriors, config: SamplerConfig, rng, tally=None):
    """Phase 1: sequential update of every global parameter."""
    if config.model == FULL:
        state.beta = cond.sample_betas(layout.X, state.logit_b, state.sigma_b2, hp, rng, layout.gram)
        resid = state.logit_b - layout.X @ state.beta
        state.sigma_b2 = cond.sample_sigma_b2(resid, hp, rng)
        centred = state.link_centred if state.link_centred is not None else layout.m > 0
        for _ in range(config.link_moves):
            state.beta, state.sigma_b2, state.logit_b, acc = cond.link_mh(
                state.beta, state.sigma_b2, state.logit_b, centred, layout.X, state.M, layout.f, hp, rng
            )
            if tally is not None:
                tally.add("link", [acc])
    else:
        state.lam = cond.sample_lambda(int(state.M.sum()), layout.n_vertices, hp, rng)
    state.alpha = cond.sample_alpha(state.alpha_x, state.sigma_delta2, hp, rng)
    state.sigma_delta2 = cond.sample_sigma_delta2(state.alpha_x, state.alpha, hp, rng)
    state.a_tau, acc = cond.sample_a_tau(
        state.a_tau, state.tau2, state.b_tau, hp, rng, config.rw_step_a_tau
    )
    if tally is not None:
        tally.add("a_tau", [acc])
    state.b_tau = cond.sample_b_tau(state.a_tau, state.tau2, hp, rng)


def _pred_log_q(state: ChainState, layout: Layout, pv, p_lo, p_hi):
    t_of = layout.v_tweet[pv]
    return special.log_ndtr(
        (state.alpha_x[t_of] - layout.log_elapsed[p_lo:p_hi]) / np.sqrt(state.tau2[t_of])
    )


def _censoring_factor(state: ChainState, layout: Layout, config: SamplerConfig, pred_t, p_lo, p_hi):
    """Censoring factor of the prediction tweets ``pred_t`` (see conditionals)."""
    pv = layout.pred_vertices[p_lo:p_hi]
    log_el = layout.log_elapsed[p_lo:p_hi]
    m = layout.m[pv]
    if config.scheme == PAPER:
        k = state.M[pv] - m
        sel = k > 0
        local = np.searchsorted(pred_t, layout.v_tweet[pv[sel]])
        return cond.survival_term(local, log_el[sel], k[sel].astype(np.float64), pred_t.size)
    local = np.searchsorted(pred_t, layout.v_tweet[pv])
    if config.model == STRAWMAN:
        return cond.marginal_poisson_term(local, log_el, state.lam, pred_t.size)
    n_free = (layout.f[pv] - m).astype(np.float64)
    sel = n_free > 0
    return cond.marginal_binomial_term(local[sel], log_el[sel], n_free[sel],
                                       state.logit_b[pv[sel]], pred_t.size)


def _update_tweets(state: ChainState, layout: Layout, config: SamplerConfig, U, lo: int, hi: int):
    """Phase 2 on tweets [lo, hi); returns acceptance flags of MH moves."""
    tw = np.arange(lo, hi)
    pred = layout.is_pred[lo:hi]
    train_t = tw[~pred]
    pred_t = tw[pred]
    s_lo, s_hi = layout.s_start[lo], layout.s_start[hi]
    s_tweet = np.repeat(np.arange(hi - lo), np.diff(layout.s_start[lo : hi + 1]))
    log_s = layout.log_s[s_lo:s_hi]

    if train_t.size:
        state.alpha_x[train_t] = cond.alpha_x_gibbs(
            layout.n_s[train_t], layout.sum_log_s[train_t], state.tau2[train_t],
            state.alpha, state.sigma_delta2, U[train_t, 0],
        )

    acc_a = acc_i = acc_t = np.zeros(0, bool)
    if pred_t.size:
        p_lo, p_hi = np.searchsorted(layout.pred_vertices, layout.v_start[[lo, hi]])
        cens = _censoring_factor(state, layout, config, pred_t, p_lo, p_hi)
        n, sls = layout.n_s[pred_t], layout.sum_log_s[pred_t]
        new_a, acc_a = cond.alpha_x_mh(
            state.alpha_x[pred_t], state.tau2[pred_t], n, sls, state.alpha, state.sigma_delta2,
            cens, U[pred_t, 0], U[pred_t, 1], config.rw_step_alpha_x,
        )
        if config.alpha_x_independence:
            new_a, acc_i = cond.alpha_x_independence_mh(
                new_a, state.tau2[pred_t], n, sls, state.alpha, state.sigma_delta2,
                cens, U[pred_t, 4], U[pred_t, 5],
            )
        state.alpha_x[pred_t] = new_a

    # tau_x^2 uses the freshly updated alpha_x of its own tweet
    resid = log_s - state.alpha_x[lo:hi][s_tweet]
    sum_sq = np.bincount(s_tweet, weights=resid * resid, minlength=hi - lo)
    if train_t.size:
        state.tau2[train_t] = cond.tau2_gibbs(
            layout.n_s[train_t], sum_sq[train_t - lo], state.a_tau, state.b_tau, U[train_t, 2]
        )
    if pred_t.size:
        new_t, acc_t = cond.tau2_mh(
            state.alpha_x[pred_t], state.tau2[pred_t], layout.n_s[pred_t], sum_sq[pred_t - lo],
            state.a_tau, state.b_tau, cens, U[pred_t, 2], U[pred_t, 3],
        )
        state.tau2[pred_t] = new_t
    return acc_a, acc_i, acc_t


def _update_vertices(state: ChainState, layout: Layout, config: SamplerConfig, U, lo: int, hi: int):
    """Phase 3 on the vertices of tweets [lo, hi); returns acceptance flags."""
    v_lo, v_hi = int(layout.v_start[lo]), int(layout.v_start[hi])
    p_lo, p_hi = np.searchsorted(layout.pred_vertices, [v_lo, v_hi])
    pv = layout.pred_vertices[p_lo:p_hi]
    log_q = _pred_log_q(state, layout, pv, p_lo, p_hi) if pv.size else np.zeros(0)
    m = layout.m[pv]
    collapsed = config.scheme == COLLAPSED

    acc_b = acc_rw = np.zeros(0, bool)
    if config.model == FULL:
        sl = slice(v_lo, v_hi)
        mu = layout.X[sl] @ state.beta
        sigma_b = math.sqrt(state.sigma_b2)
        lb = state.logit_b[sl].copy()
        new_b, acc_b = cond.logit_b_mh(lb, state.M[sl], layout.f[sl], mu, sigma_b, U[sl, 0], U[sl, 1])
        if collapsed and pv.size:
            # prediction vertices target the degree-marginal conditional instead
            loc = pv - v_lo
            new_b[loc], acc_p = cond.logit_b_marginal_mh(
                lb[loc], m, layout.f[pv], log_q, mu[loc], sigma_b, U[pv, 0], U[pv, 1]
            )
            acc_b = acc_b.copy()
            acc_b[loc] = acc_p
        if config.b_random_walk:
            step = cond.b_step_sizes(layout.m[sl])
            before = new_b
            new_b, acc_rw = cond.logit_b_rw(new_b, mu, sigma_b, step, U[sl, 4], U[sl, 5],
                                            M=state.M[sl], f=layout.f[sl])
            if collapsed and pv.size:
                loc = pv - v_lo
                new_b[loc], acc_rw[loc] = cond.logit_b_rw(
                    before[loc], mu[loc], sigma_b, step[loc], U[pv, 4], U[pv, 5],
                    m=m, f=layout.f[pv], log_q=log_q,
                )
        state.logit_b[sl] = new_b

    acc_m = np.zeros(0, bool)
    if pv.size:
        if config.model == STRAWMAN:
            state.M[pv] = cond.offspring_poisson_exact(m, state.lam, log_q, U[pv, 2])
        elif collapsed or config.offspring_update == "exact":
            state.M[pv] = cond.offspring_exact(m, layout.f[pv], state.logit_b[pv], log_q, U[pv, 2])
        else:
            new_m, acc_m = cond.offspring_mh(
                state.M[pv], m, layout.f[pv], state.logit_b[pv], log_q, U[pv, 2], U[pv, 3]
            )
            state.M[pv] = new_m
    return acc_b, acc_rw, acc_m


def _chunks(layout: Layout, n: int) -> list[tuple[int, int]]:
    """Split tweets into at most ``n`` contiguous ranges of similar vertex count."""
    T = layout.n_tweets
    if n <= 1 or T <= 1:
        return [(0, T)]
    targets = np.linspace(0, layout.n_vertices, n + 1)[1:-1]
    cuts = np.unique(np.searchsorted(layout.v_start[1:], targets, side="left") + 1)
    bounds = [0] + [int(c) for c in cuts if 0 < c < T] + [T]
    return list(zip(bounds[:-1], bounds[1:]))


def sweep(state: ChainState, layout: Layout, hp: Hyperpriors, config: SamplerConfig, chain_id: int,
          tally: Optional[AcceptanceTally] = None, executor=None, chunks=None):
    """One full Metropolis-within-Gibbs iteration (in place)."""
    it = state.iteration
    update_globals(state, layout, hp, config, stream(config.seed, chain_id, PHASE_GLOBAL, it), tally)

    chunks = chunks or [(0, layout.n_tweets)]
    U2 = open_uniforms(stream(config.seed, chain_id, PHASE_TWEET, it), (layout.n_tweets, 6))
    run = (lambda fn, args: list(executor.map(lambda a: fn(*a), args))) if executor else (
        lambda fn, args: [fn(*a) for a in args]
    )
    res = run(_update_tweets, [(state, layout, config, U2, lo, hi) for lo, hi in chunks])
    if tally is not None:
        for acc_a, acc_i, acc_t in res:
            tally.add("alpha_x", acc_a)
            tally.add("alpha_x_ind", acc_i)
            tally.add("tau_x", acc_t)

    U3 = open_uniforms(stream(config.seed, chain_id, PHASE_VERTEX, it), (layout.n_vertices, 6))
    res = run(_update_vertices, [(state, layout, config, U3, lo, hi) for lo, hi in chunks])
    if tally is not None:
        for acc_b, acc_rw, acc_m in res:
            tally.add("b", acc_b)
            tally.add("b_rw", acc_rw)
            tally.add("M", acc_m)
    state.iteration += 1


def check_constraints(state: ChainState, layout: Layout, model: str = FULL) -> int:
    """Number of latent degrees outside [m_j, f_j].

    The strawman's Poisson offspring law has no follower cap, so for it
    only the lower bound m_j applies.
    """
    pv = layout.pred_vertices
    M = state.M[pv]
    bad = M < layout.m[pv]
    if model == FULL:
        bad |= M > layout.f[pv]
    return int(np.count_nonzero(bad))


# ---------------------------------------------------------------------------
# Log-likelihood of the data given a parameter state
# ---------------------------------------------------------------------------


def complete_loglik(layout: Layout, model: str, alpha_x, tau2, M, logit_b=None, lam=None) -> float:
    """Log-likelihood of reaction times, observed degrees and latent degrees.

    Reaction-time kernels for every observed reaction time, the censoring
    terms log C(M_j, m_j) + (M_j - m_j) log q_j of partially observed
    tweets, and the offspring law of every vertex (binomial for the full
    model, Poisson for the strawman).
    """
    T = layout.n_tweets
    s_tweet = np.repeat(np.arange(T), np.diff(layout.s_start))
    z2 = (layout.log_s - alpha_x[s_tweet]) ** 2 / tau2[s_tweet]
    ll = float(np.sum(-0.5 * z2 - 0.5 * np.log(tau2[s_tweet]) - LOG_SQRT_2PI))

    pv = layout.pred_vertices
    if pv.size:
        t_of = layout.v_tweet[pv]
        k = M[pv] - layout.m[pv]
        log_q = special.log_ndtr((alpha_x[t_of] - layout.log_elapsed) / np.sqrt(tau2[t_of]))
        ll += float(np.sum(log_choose(M[pv], layout.m[pv]))) + float(
            np.sum(np.where(k > 0, k * log_q, 0.0))
        )
    if model == STRAWMAN:
        ll += float(np.sum(stats.poisson.logpmf(M, lam)))
    else:
        ll += float(np.sum(binom_logpmf_logit(M, layout.f, logit_b)))
    return ll


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass
class ChainSamples:
    """Draws of one chain after burn-in and thinning."""

    chain_id: int
    iterations: np.ndarray
    param_names: tuple[str, ...]
    globals: np.ndarray  # (n_kept, n_params)
    alpha_x: np.ndarray  # (n_kept, n_tweets)
    tau_x: np.ndarray  # (n_kept, n_tweets)
    totals: np.ndarray  # (n_kept, n_prediction_tweets) predicted final sizes
    loglik: np.ndarray  # (n_kept,)
    acceptance: AcceptanceTally
    means: dict
    latent_M: Optional[np.ndarray] = None  # (n_kept, n_prediction_vertices)
    constraint_violations: int = 0

    def param(self, name: str) -> np.ndarray:
        return self.globals[:, self.param_names.index(name)]


@dataclass
class PosteriorSamples:
    layout: Layout
    config: SamplerConfig
    hp: Hyperpriors
    chains: list[ChainSamples]

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.chains[0].param_names

    @property
    def n_kept(self) -> int:
        return self.chains[0].globals.shape[0]

    def param(self, name: str) -> np.ndarray:
        """(n_chains, n_kept) draws of a global parameter."""
        return np.stack([c.param(name) for c in self.chains])

    def tweet_param(self, name: str, tweet_id: str) -> np.ndarray:
        t = self.layout.tweet_index(tweet_id)
        return np.stack([getattr(c, name)[:, t] for c in self.chains])

    def totals(self, tweet_id: str) -> np.ndarray:
        """(n_chains, n_kept) draws of sum_j M_j over the observed vertices."""
        t = self.layout.tweet_index(tweet_id)
        if not self.layout.is_pred[t]:
            raise KeyError(f"tweet {tweet_id} is not a prediction tweet")
        col = int(np.searchsorted(self.layout.pred_tweets, t))
        return np.stack([c.totals[:, col] for c in self.chains])

    def loglik(self) -> np.ndarray:
        return np.concatenate([c.loglik for c in self.chains])

    def acceptance_rates(self) -> dict:
        out = {}
        for fam in MH_FAMILIES:
            acc = sum(c.acceptance.accepted[fam] for c in self.chains)
            prop = sum(c.acceptance.proposed[fam] for c in self.chains)
            out[fam] = (acc, prop)
        return out


def run_layout_chain(layout: Layout, config: SamplerConfig, chain_id: int,
                     hp: Hyperpriors = Hyperpriors(), workers: int = 1,
                     state: Optional[ChainState] = None) -> ChainSamples:
    """Run one chain on a prepared layout."""
    state = state or initial_state(layout, config, chain_id, hp)
    tally = AcceptanceTally()
    names = STRAWMAN_PARAMS if config.model == STRAWMAN else FULL_PARAMS
    n_kept = config.n_kept
    T, P = layout.n_tweets, layout.pred_tweets.size
    pv = layout.pred_vertices
    g_out = np.empty((n_kept, len(names)))
    a_out = np.empty((n_kept, T))
    t_out = np.empty((n_kept, T))
    tot_out = np.empty((n_kept, P), dtype=np.int64)
    ll_out = np.empty(n_kept)
    latent = np.empty((n_kept, pv.size), dtype=np.int32) if config.store_latent else None
    sums = {
        "alpha_x": np.zeros(T), "tau2": np.zeros(T), "b": np.zeros(layout.n_vertices),
        "M": np.zeros(layout.n_vertices), "lam": 0.0,
    }
    pred_of_v = np.searchsorted(layout.pred_tweets, layout.v_tweet[pv])
    chunks = _chunks(layout, workers)
    executor = ThreadPoolExecutor(workers) if workers > 1 and len(chunks) > 1 else None
    k = 0
    try:
        for it in range(config.n_iterations):
            state.iteration = it
            sweep(state, layout, hp, config, chain_id, tally, executor, chunks)
            if config.check_constraints:
                bad = check_constraints(state, layout, config.model)
                if bad:
                    raise ConstraintViolation(
                        f"chain {chain_id} iteration {it}: {bad} latent degrees out of range"
                    )
            if it < config.burn_in or (it - config.burn_in) % config.thinning:
                continue
            g_out[k] = state.record(config.model)
            a_out[k] = state.alpha_x
            t_out[k] = np.sqrt(state.tau2)
            tot_out[k] = np.bincount(pred_of_v, weights=state.M[pv], minlength=P)
            if latent is not None:
                latent[k] = state.M[pv]
            ll_out[k] = complete_loglik(
                layout, config.model, state.alpha_x, state.tau2, state.M, state.logit_b, state.lam
            )
            sums["alpha_x"] += state.alpha_x
            sums["tau2"] += state.tau2
            sums["b"] += special.expit(state.logit_b)
            sums["M"] += state.M
            sums["lam"] += state.lam
            k += 1
    finally:
        if executor is not None:
            executor.shutdown()
    means = {key: val / max(k, 1) for key, val in sums.items()}
    log.debug("chain %d acceptance: %s", chain_id, {f: tally.rate(f) for f in MH_FAMILIES})
    return ChainSamples(
        chain_id=chain_id,
        iterations=np.arange(config.burn_in, config.n_iterations, config.thinning),
        param_names=names,
        globals=g_out,
        alpha_x=a_out,
        tau_x=t_out,
        totals=tot_out,
        loglik=ll_out,
        acceptance=tally,
        means=means,
        latent_M=latent,
    )


def run_chain(dataset: Dataset, config: SamplerConfig, chain_id: int,
              hp: Hyperpriors = Hyperpriors(), workers: int = 1) -> PosteriorSamples:
    """Run a single chain and wrap it as :class:`PosteriorSamples`."""
    layout = build_layout(dataset)
    return PosteriorSamples(layout, config, hp, [run_layout_chain(layout, config, chain_id, hp, workers)])


def _chain_job(args):
    layout, config, chain_id, hp, workers = args
    return run_layout_chain(layout, config, chain_id, hp, workers)


def sample_posterior(dataset: Dataset, config: SamplerConfig = SamplerConfig(),
                     hp: Hyperpriors = Hyperpriors(), workers: int = 1) -> PosteriorSamples:
    """Run ``config.n_chains`` independent chains.

    With ``workers > 1`` chains run in separate processes; leftover workers
    split the tweet and vertex phases of each chain into threads.  The draws
    do not depend on ``workers``.
    """
    layout = build_layout(dataset)
    n = config.n_chains
    procs = min(workers, n)
    inner = max(1, workers // max(procs, 1))
    jobs = [(layout, config, c, hp, inner) for c in range(n)]
    if procs > 1:
        with ProcessPoolExecutor(procs) as pool:
            chains = list(pool.map(_chain_job, jobs))
    else:
        chains = [_chain_job(j) for j in jobs]
    return PosteriorSamples(layout, config, hp, chains)
