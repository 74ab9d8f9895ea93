"""Full-conditional updates of the Metropolis-within-Gibbs sampler.

Global updates take a ``numpy.random.Generator``.  Tweet- and
vertex-level updates are vectorised over units and consume pre-drawn
uniforms (one row per unit, see :mod:`cascadecast.mcmc.rng`), so they can
be evaluated on any split of the units with identical results.

Variances are the sampled quantities for sigma_b, sigma_delta and tau_x.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

from ..model import Hyperpriors, lognormal_log_survival, log_expit
from .rng import std_normal

RW_STEP = 0.2
LINK_SCALE = 2.38**2 / 4


class DegenerateDesignError(np.linalg.LinAlgError):
    """The covariate design of the logit-link regression is singular."""


_COLUMNS = ("intercept", "log(f+1)", "log(d+1)")


def design_matrix(f, d) -> np.ndarray:
    """Regressors (1, log(f+1), log(d+1)) of the logit link, one row per vertex."""
    f = np.asarray(f, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return np.column_stack([np.ones_like(f), np.log1p(f), np.log1p(d)])


def _invgamma(rng, shape, scale):
    return scale / rng.gamma(shape)


# ---------------------------------------------------------------------------
# Global parameters
# ---------------------------------------------------------------------------


def beta_conditional(X, logit_b, sigma_b2, hp: Hyperpriors = Hyperpriors(), gram=None):
    """Mean and covariance of (beta0, beta_f, beta_d) given the logits.

    Bayesian linear regression of ``logit_b`` on ``X`` with noise variance
    ``sigma_b2`` and independent N(mu_beta, sigma_beta^2) priors.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(logit_b, dtype=np.float64)
    if gram is None:
        gram = X.T @ X
    # precision scaled by sigma_b2, matching the N1/F2/D2 ridge form
    ridge = sigma_b2 / hp.sigma_beta**2
    A = gram + ridge * np.eye(3)
    rhs = X.T @ y + ridge * hp.mu_beta
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError(_collinear_message(gram)) from None
    if np.linalg.cond(A) > 1e12:
        raise DegenerateDesignError(_collinear_message(gram))
    mean = np.linalg.solve(A, rhs)
    cov = sigma_b2 * np.linalg.inv(A)
    return mean, cov, L


def _collinear_message(gram) -> str:
    w, v = np.linalg.eigh(gram)
    null = v[:, 0]
    cols = [c for c, x in zip(_COLUMNS, null) if abs(x) > 1e-6]
    return "singular logit-link design; collinear columns: " + ", ".join(cols)


def sample_betas(X, logit_b, sigma_b2, hp: Hyperpriors, rng, gram=None) -> np.ndarray:
    """Exact Gibbs draw of (beta0, beta_f, beta_d)."""
    mean, _, L = beta_conditional(X, logit_b, sigma_b2, hp, gram)
    z = rng.standard_normal(3)
    # cov = sigma_b2 * (L L^T)^{-1}  =>  draw = mean + sqrt(sigma_b2) * L^{-T} z
    return mean + np.sqrt(sigma_b2) * np.linalg.solve(L.T, z)


def sample_sigma_b2(residuals, hp: Hyperpriors, rng) -> float:
    r = np.asarray(residuals, dtype=np.float64)
    return float(_invgamma(rng, hp.a_sigma_b + 0.5 * r.size, hp.b_sigma_b + 0.5 * np.dot(r, r)))


def link_log_target(beta, log_sigma_b2, u, centred, X, M, f, hp: Hyperpriors) -> float:
    """Log density of (beta, log sigma_b^2) under a partially non-centred
    parameterization of the logits.

    ``u`` holds the logit itself where ``centred`` is true and the
    standardized value z = (logit b - X beta) / sigma_b elsewhere.  Centred
    logits contribute their normal density; non-centred ones (whose z is
    N(0, 1) whatever the link parameters) contribute the binomial likelihood
    at logit b = X beta + sigma_b z.  Includes the log-scale Jacobian of
    sigma_b^2.
    """
    s2 = math.exp(log_sigma_b2)
    sd = math.sqrt(s2)
    mu = X @ beta
    lp = float(np.sum(-0.5 * ((beta - hp.mu_beta) / hp.sigma_beta) ** 2))
    lp += -(hp.a_sigma_b + 1.0) * log_sigma_b2 - hp.b_sigma_b / s2 + log_sigma_b2
    r = (u[centred] - mu[centred]) / sd
    lp += float(-0.5 * np.dot(r, r)) - 0.5 * r.size * log_sigma_b2
    nc = ~centred
    return lp + float(np.sum(_binomial_kernel(M[nc], f[nc], mu[nc] + sd * u[nc])))


def _link_precision(beta, log_sigma_b2, u, centred, X, f, hp: Hyperpriors) -> np.ndarray:
    """Gauss-Newton precision of :func:`link_log_target` at a point."""
    s2 = math.exp(log_sigma_b2)
    sd = math.sqrt(s2)
    nc = ~centred
    Xn = X[nc]
    lb = Xn @ beta + sd * u[nc]
    w = f[nc] * special.expit(lb) * special.expit(-lb)
    J = np.column_stack([Xn, 0.5 * sd * u[nc]])
    P = J.T @ (w[:, None] * J)
    Xc = X[centred]
    P[:3, :3] += Xc.T @ Xc / s2
    P[3, 3] += 0.5 * Xc.shape[0] + hp.b_sigma_b / s2
    P[np.diag_indices(3)] += 1.0 / hp.sigma_beta**2
    return P


def link_mh(beta, sigma_b2, logit_b, centred, X, M, f, hp: Hyperpriors, rng, scale=LINK_SCALE):
    """Metropolis-Hastings move of (beta, sigma_b^2) that carries the
    non-centred logits along with their standardized values.

    ``centred`` must depend on the data only.  The proposal is normal
    around the current point with covariance ``scale`` times the inverse
    Gauss-Newton precision there; the Hastings ratio corrects for its
    position dependence.  Returns (beta, sigma_b2, logit_b, accepted).
    """
    sd = math.sqrt(sigma_b2)
    mu = X @ beta
    u = np.where(centred, logit_b, (logit_b - mu) / sd)
    cur = np.append(beta, math.log(sigma_b2))
    L_cur = np.linalg.cholesky(_link_precision(cur[:3], cur[3], u, centred, X, f, hp) / scale)
    prop = cur + np.linalg.solve(L_cur.T, rng.standard_normal(4))
    log_u = math.log(rng.random())
    if not np.isfinite(prop).all() or abs(prop[3]) > 700:
        return beta, sigma_b2, logit_b, False
    L_prop = np.linalg.cholesky(_link_precision(prop[:3], prop[3], u, centred, X, f, hp) / scale)
    d = prop - cur

    def log_q(L):  # log N(d | 0, (L L^T)^{-1}) up to a shared constant
        return float(np.sum(np.log(np.diag(L)))) - 0.5 * float(np.sum((L.T @ d) ** 2))

    ratio = (
        link_log_target(prop[:3], prop[3], u, centred, X, M, f, hp)
        - link_log_target(cur[:3], cur[3], u, centred, X, M, f, hp)
        + log_q(L_prop) - log_q(L_cur)
    )
    if log_u < ratio:
        s2 = math.exp(prop[3])
        return prop[:3], s2, np.where(centred, u, X @ prop[:3] + math.sqrt(s2) * u), True
    return beta, sigma_b2, logit_b, False


def alpha_conditional(alpha_x, sigma_delta2, hp: Hyperpriors):
    """Mean and variance of the population log-time mean given tweet means."""
    a = np.asarray(alpha_x, dtype=np.float64)
    ratio = sigma_delta2 / hp.sigma_alpha**2
    denom = a.size + ratio
    mean = (a.sum() + ratio * hp.mu_alpha) / denom
    return mean, sigma_delta2 / denom


def sample_alpha(alpha_x, sigma_delta2, hp: Hyperpriors, rng) -> float:
    mean, var = alpha_conditional(alpha_x, sigma_delta2, hp)
    return float(mean + np.sqrt(var) * rng.standard_normal())


def sample_sigma_delta2(alpha_x, alpha, hp: Hyperpriors, rng) -> float:
    r = np.asarray(alpha_x, dtype=np.float64) - alpha
    return float(_invgamma(rng, hp.a_delta + 0.5 * r.size, hp.b_delta + 0.5 * np.dot(r, r)))


def a_tau_log_target(a_tau, tau2, b_tau, hp: Hyperpriors):
    """Log conditional density of a_tau up to a constant (``-inf`` for a <= 0)."""
    a = np.asarray(a_tau, dtype=np.float64)
    tau2 = np.asarray(tau2, dtype=np.float64)
    n = tau2.size
    sum_log_tau2 = np.log(tau2).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log(a)
        out = (
            -0.5 * (la - hp.mu_a) ** 2 / hp.sigma_a**2
            - la
            + n * (a * np.log(b_tau) - special.gammaln(a))
            - a * sum_log_tau2
        )
    return np.where(a > 0, out, -np.inf)


def sample_a_tau(a_tau, tau2, b_tau, hp: Hyperpriors, rng, step: float = RW_STEP):
    """One random-walk Metropolis step on a_tau; returns (value, accepted)."""
    prop = a_tau + step * rng.standard_normal()
    log_u = np.log(rng.random())
    if prop <= 0:
        return a_tau, False
    ratio = a_tau_log_target(prop, tau2, b_tau, hp) - a_tau_log_target(a_tau, tau2, b_tau, hp)
    if log_u < ratio:
        return float(prop), True
    return a_tau, False


def b_tau_conditional(a_tau, tau2, hp: Hyperpriors):
    """Shape and scale of the gamma conditional of b_tau."""
    tau2 = np.asarray(tau2, dtype=np.float64)
    shape = hp.k_b + tau2.size * a_tau
    scale = 1.0 / (1.0 / hp.theta_b + np.sum(1.0 / tau2))
    return shape, scale


def sample_b_tau(a_tau, tau2, hp: Hyperpriors, rng) -> float:
    shape, scale = b_tau_conditional(a_tau, tau2, hp)
    return float(scale * rng.gamma(shape))


def lambda_conditional(total_children, n_vertices, hp: Hyperpriors):
    """Shape and scale of the gamma conditional of the strawman Poisson rate."""
    return hp.k_lambda + total_children, 1.0 / (1.0 / hp.theta_lambda + n_vertices)


def sample_lambda(total_children, n_vertices, hp: Hyperpriors, rng) -> float:
    shape, scale = lambda_conditional(total_children, n_vertices, hp)
    return float(scale * rng.gamma(shape))


# ---------------------------------------------------------------------------
# Tweet-level parameters (vectorised over tweets)
# ---------------------------------------------------------------------------


def alpha_x_conditional(n, sum_log_s, tau2, alpha, sigma_delta2):
    """Mean and variance of alpha_x for fully observed tweets."""
    ratio = tau2 / sigma_delta2
    denom = n + ratio
    return (sum_log_s + ratio * alpha) / denom, tau2 / denom


def alpha_x_gibbs(n, sum_log_s, tau2, alpha, sigma_delta2, u):
    mean, var = alpha_x_conditional(n, sum_log_s, tau2, alpha, sigma_delta2)
    return mean + np.sqrt(var) * std_normal(u)


def tau2_gibbs(n, sum_sq, a_tau, b_tau, u):
    """Inverse-gamma draw IG(a_tau + n/2, b_tau + sum_sq/2) by inversion."""
    return (b_tau + 0.5 * sum_sq) / special.gammaincinv(a_tau + 0.5 * n, u)


def censored_log_survival(tweet_of, log_elapsed, k, alpha_x, tau2, n_tweets):
    """Per-tweet sum of k_j * log(1 - F(log elapsed_j)) over censored vertices.

    ``tweet_of`` maps each censored vertex to a local tweet index;
    ``alpha_x``/``tau2`` are per tweet.
    """
    if tweet_of.size == 0:
        return np.zeros(n_tweets)
    ls = lognormal_log_survival(log_elapsed, alpha_x[tweet_of], np.sqrt(tau2[tweet_of]))
    return np.bincount(tweet_of, weights=k * ls, minlength=n_tweets)


# The tweet-level Metropolis steps of partially observed tweets take the
# censoring factor as a callable ``cens(alpha_x, tau2) -> per-tweet log
# factor``.  The paper's sampler conditions on the latent degrees
# (``survival_term``); the collapsed sampler sums them out
# (``marginal_binomial_term`` / ``marginal_poisson_term``).


def survival_term(tweet_of, log_elapsed, k, n_tweets):
    """Factor prod_j q_j^(M_j - m_j) given the latent degrees (k = M - m)."""
    return lambda a, t2: censored_log_survival(tweet_of, log_elapsed, k, a, t2, n_tweets)


def log_one_minus_b_cdf(logit_b, log_q):
    """log(1 - b + b q) computed as logaddexp(log(1 - b), log b + log q)."""
    return np.logaddexp(log_expit(-logit_b), log_expit(logit_b) + log_q)


def marginal_binomial_term(tweet_of, log_elapsed, n_free, logit_b, n_tweets):
    """Factor prod_j (1 - b_j + b_j q_j)^(f_j - m_j): latent degrees summed out.

    sum_{M >= m} C(M, m) q^(M - m) Bi(M | f, b) = C(f, m) b^m (1 - b + b q)^(f - m).
    """
    def cens(a, t2):
        if tweet_of.size == 0:
            return np.zeros(n_tweets)
        log_q = lognormal_log_survival(log_elapsed, a[tweet_of], np.sqrt(t2[tweet_of]))
        return np.bincount(tweet_of, weights=n_free * log_one_minus_b_cdf(logit_b, log_q),
                           minlength=n_tweets)
    return cens


def marginal_poisson_term(tweet_of, log_elapsed, lam, n_tweets):
    """Factor prod_j exp(-lambda (1 - q_j)): Poisson latent degrees summed out."""
    def cens(a, t2):
        if tweet_of.size == 0:
            return np.zeros(n_tweets)
        cdf = special.ndtr((log_elapsed - a[tweet_of]) / np.sqrt(t2[tweet_of]))
        return np.bincount(tweet_of, weights=-lam * cdf, minlength=n_tweets)
    return cens


def alpha_x_mh(alpha_x, tau2, n, sum_log_s, alpha, sigma_delta2, cens, u_step, u_accept,
               step: float = RW_STEP):
    """Random-walk Metropolis step on alpha_x for partially observed tweets.

    Target: N(alpha_x | alpha, sigma_delta2) x observed log-normal terms x
    censoring factor ``cens``.  Returns (values, accepted).
    """
    prop = alpha_x + step * std_normal(u_step)
    d = prop - alpha_x
    log_ratio = (
        -d * (n * (prop + alpha_x) - 2.0 * sum_log_s) / (2.0 * tau2)
        - ((prop - alpha) ** 2 - (alpha_x - alpha) ** 2) / (2.0 * sigma_delta2)
        + cens(prop, tau2)
        - cens(alpha_x, tau2)
    )
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, alpha_x), accept


def alpha_x_independence_mh(alpha_x, tau2, n, sum_log_s, alpha, sigma_delta2, cens, u_prop, u_accept):
    """Independence Metropolis step on alpha_x for partially observed tweets.

    The proposal is the conjugate normal given the observed reaction times
    (the training-tweet conditional), so the acceptance ratio is the ratio
    of the censoring factors.  Returns (values, accepted).
    """
    prop = alpha_x_gibbs(n, sum_log_s, tau2, alpha, sigma_delta2, u_prop)
    log_ratio = cens(prop, tau2) - cens(alpha_x, tau2)
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, alpha_x), accept


def tau2_mh(alpha_x, tau2, n, sum_sq, a_tau, b_tau, cens, u_prop, u_accept):
    """Metropolis-Hastings step on tau_x^2 for partially observed tweets.

    The proposal is the conjugate inverse-gamma, so the acceptance ratio is
    the ratio of the censoring factors.  Returns (values, accepted).
    """
    prop = tau2_gibbs(n, sum_sq, a_tau, b_tau, u_prop)
    log_ratio = cens(alpha_x, prop) - cens(alpha_x, tau2)
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, tau2), accept


# ---------------------------------------------------------------------------
# Vertex-level parameters (vectorised over vertices)
# ---------------------------------------------------------------------------


def _binomial_kernel(M, f, logit_b):
    # M log b + (f - M) log(1 - b), with 0 * log 0 = 0
    return np.where(M > 0, M * log_expit(logit_b), 0.0) + np.where(
        f > M, (f - M) * log_expit(-logit_b), 0.0
    )


def logit_b_mh(logit_b, M, f, mu, sigma_b, u_prop, u_accept):
    """Independence Metropolis step on logit(b_j) with proposal N(mu_j, sigma_b^2).

    The proposal is the prior, so the Hastings ratio is the binomial
    likelihood ratio.  Returns (values, accepted).
    """
    prop = mu + sigma_b * std_normal(u_prop)
    log_ratio = _binomial_kernel(M, f, prop) - _binomial_kernel(M, f, logit_b)
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, logit_b), accept


def _marginal_kernel(m, f, log_q, logit_b):
    # m log b + (f - m) log(1 - b + b q): the latent degree summed out
    return np.where(m > 0, m * log_expit(logit_b), 0.0) + np.where(
        f > m, (f - m) * log_one_minus_b_cdf(logit_b, log_q), 0.0
    )


def logit_b_marginal_mh(logit_b, m, f, log_q, mu, sigma_b, u_prop, u_accept):
    """Independence Metropolis step on logit(b_j) with the latent degree summed out.

    Target: N(logit b | mu, sigma_b^2) b^m (1 - b + b q)^(f - m); with the
    prior as proposal the ratio is the ratio of the marginal likelihoods.
    """
    prop = mu + sigma_b * std_normal(u_prop)
    log_ratio = _marginal_kernel(m, f, log_q, prop) - _marginal_kernel(m, f, log_q, logit_b)
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, logit_b), accept


def b_step_sizes(m) -> np.ndarray:
    """Random-walk steps for logit(b_j): 2.4 / sqrt(m_j + 1).

    The binomial information about logit b is roughly the number of
    retweets, so this tracks the posterior scale of informative vertices
    while depending on the observed data only.
    """
    return 2.4 / np.sqrt(np.asarray(m, dtype=np.float64) + 1.0)


def logit_b_rw(logit_b, mu, sigma_b, step, u_step, u_accept, M=None, f=None, m=None, log_q=None):
    """Random-walk Metropolis step on logit(b_j).

    The likelihood is Bi(M | f, b) when ``M`` is given, otherwise the
    degree-marginal b^m (1 - b + b q)^(f - m).  Complements the
    independence step, which rarely moves vertices whose likelihood is much
    narrower than the prior.  Returns (values, accepted).
    """
    prop = logit_b + step * std_normal(u_step)
    if M is not None:
        like = _binomial_kernel(M, f, prop) - _binomial_kernel(M, f, logit_b)
    else:
        like = _marginal_kernel(m, f, log_q, prop) - _marginal_kernel(m, f, log_q, logit_b)
    log_ratio = like - ((prop - mu) ** 2 - (logit_b - mu) ** 2) / (2.0 * sigma_b**2)
    accept = np.log(u_accept) < log_ratio
    return np.where(accept, prop, logit_b), accept


def offspring_mh(M, m, f, logit_b, log_q, u_prop, u_accept):
    """Metropolis step on the latent final degree with proposal Bi(f_j, b_j).

    Target: C(M, m) q^(M - m) Bi(M | f, b) 1{M >= m}.  Proposals below the
    observed degree are rejected.  Returns (values, accepted).
    """
    b = special.expit(logit_b)
    prop = _binom_quantile(u_prop, f, b)
    valid = prop >= m
    log_ratio = (
        _log_choose_ratio(prop, M, m) + np.where(valid, (prop - M) * log_q, 0.0)
    )
    accept = valid & (np.log(u_accept) < log_ratio)
    return np.where(accept, prop, M), accept


def offspring_exact(m, f, logit_b, log_q, u):
    """Exact draw from the same target: M - m ~ Bi(f - m, b q / (b q + 1 - b))."""
    log_b = log_expit(logit_b)
    log_1mb = log_expit(-logit_b)
    p = np.exp(log_b + log_q - np.logaddexp(log_b + log_q, log_1mb))
    return m + _binom_quantile(u, f - m, p)


def offspring_poisson_exact(m, lam, log_q, u):
    """Exact strawman draw: M - m ~ Poisson(lambda q)."""
    return m + stats.poisson.ppf(u, lam * np.exp(log_q)).astype(np.int64)


def _binom_quantile(u, n, p):
    return stats.binom.ppf(u, n, p).astype(np.int64)


def _log_choose_ratio(prop, M, m):
    """log C(prop, m) - log C(M, m), zero where prop < m."""
    prop_f = np.asarray(prop, dtype=np.float64)
    M_f = np.asarray(M, dtype=np.float64)
    m_f = np.asarray(m, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        out = (
            special.gammaln(prop_f + 1.0)
            - special.gammaln(np.maximum(prop_f - m_f, 0.0) + 1.0)
            - special.gammaln(M_f + 1.0)
            + special.gammaln(M_f - m_f + 1.0)
        )
    return np.where(prop_f >= m_f, out, 0.0)
