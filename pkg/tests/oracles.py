"""Independent oracles for the conditional-correctness suites.

Every target here is written directly from scipy densities, never from the
package's own conditional formulas, and normalised numerically on a grid.
The frozen toy states are shared by tests/test_conditionals.py and the
acceptance criteria 1 and 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from cascadecast.model import Hyperpriors
from cascadecast.mcmc import conditionals as cond

N_GIBBS = 20_000
N_MH = 100_000
KS_TOL = 0.05
TV_TOL = 0.03
TV_TOL_M = 0.02


# ---------------------------------------------------------------------------
# Grid machinery
# ---------------------------------------------------------------------------


@dataclass
class GridDensity:
    x: np.ndarray
    cdf: np.ndarray

    @classmethod
    def from_logpdf(cls, logpdf, lo, hi, n=20_001):
        x = np.linspace(lo, hi, n)
        lp = np.array([logpdf(v) for v in x])
        p = np.exp(lp - lp.max())
        c = integrate.cumulative_trapezoid(p, x, initial=0.0)
        if p[0] > 1e-8 * p.max() or p[-1] > 1e-8 * p.max():
            raise AssertionError("grid does not cover the target's mass")
        return cls(x, c / c[-1])

    def __call__(self, v):
        return np.interp(v, self.x, self.cdf)

    def ks(self, draws) -> float:
        """Kolmogorov-Smirnov distance between the draws and this CDF."""
        d = np.sort(np.asarray(draws, dtype=np.float64))
        n = d.size
        F = self(d)
        return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))

    def tv(self, draws, n_bins=20) -> float:
        """Total variation over bins equiprobable under this CDF."""
        edges = np.interp(np.linspace(0, 1, n_bins + 1), self.cdf, self.x)
        edges[0], edges[-1] = -np.inf, np.inf
        counts = np.histogram(draws, edges)[0] / len(draws)
        return 0.5 * float(np.sum(np.abs(counts - 1.0 / n_bins)))


def tv_pmf(draws, support, pmf) -> float:
    counts = np.array([np.mean(np.asarray(draws) == k) for k in support])
    return 0.5 * float(np.abs(counts - np.asarray(pmf)).sum() + max(0.0, 1 - counts.sum()))


def run_chain(step, x0, n=N_MH):
    """Sequential chain of ``n`` applications of ``step``."""
    out = np.empty(n)
    x = x0
    for i in range(n):
        x = step(x)
        out[i] = float(np.asarray(x).ravel()[0])
    return out


# ---------------------------------------------------------------------------
# Frozen toy state
# ---------------------------------------------------------------------------


@dataclass
class Toy:
    hp: Hyperpriors
    # globals
    alpha: float
    sigma_delta2: float
    a_tau: float
    b_tau: float
    beta: np.ndarray
    sigma_b2: float
    # per tweet
    alpha_x: np.ndarray
    tau2: np.ndarray
    log_s: np.ndarray  # observed log reaction times of tweet 0
    # per vertex
    X: np.ndarray
    logit_b: np.ndarray
    M: np.ndarray
    f: np.ndarray
    # censored vertices of a partially observed tweet
    m_c: np.ndarray
    f_c: np.ndarray
    log_elapsed: np.ndarray
    logit_b_c: np.ndarray
    M_c: np.ndarray


def toy_state(seed: int = 11) -> Toy:
    r = np.random.default_rng(seed)
    f = r.integers(1, 400, 40)
    d = r.integers(0, 4, 40)
    X = cond.design_matrix(f, d)
    beta = np.array([-2.0, -0.3, -1.0])
    logit_b = X @ beta + 0.8 * r.standard_normal(40)
    M = r.binomial(f, special.expit(logit_b))
    return Toy(
        hp=Hyperpriors(),
        alpha=7.0, sigma_delta2=0.6**2, a_tau=1.5, b_tau=2.5,
        beta=beta, sigma_b2=0.8**2,
        alpha_x=r.normal(7.0, 0.6, 25), tau2=2.5 / r.gamma(1.5, size=25),
        log_s=r.normal(6.5, 1.4, 12),
        X=X, logit_b=logit_b, M=M, f=f,
        m_c=np.array([0, 1, 2, 0]), f_c=np.array([5, 8, 6, 3]),
        log_elapsed=np.log([400.0, 900.0, 1500.0, 50.0]),
        logit_b_c=np.array([-1.0, -0.5, 0.2, -2.0]),
        M_c=np.array([1, 2, 3, 0]),
    )


# ---------------------------------------------------------------------------
# Exact Gibbs oracles (criterion 1): (name, draw(rng, n), GridDensity)
# ---------------------------------------------------------------------------


def _logsum(v):
    return float(np.sum(v))


def gibbs_cases(t: Toy):
    hp = t.hp
    cases = []

    # (beta0, beta_f, beta_d): each coordinate's marginal, normal with the
    # covariance (X'X / s2 + I / sigma_beta^2)^-1 of the conjugate regression
    prec = t.X.T @ t.X / t.sigma_b2 + np.eye(3) / hp.sigma_beta**2
    cov = np.linalg.inv(prec)
    mean = cov @ (t.X.T @ t.logit_b / t.sigma_b2 + hp.mu_beta / hp.sigma_beta**2)

    def draw_beta(rng, n):
        return np.array([cond.sample_betas(t.X, t.logit_b, t.sigma_b2, hp, rng) for _ in range(n)])

    for k, name in enumerate(("beta0", "beta_f", "beta_d")):
        sd = math.sqrt(cov[k, k])
        grid = GridDensity.from_logpdf(lambda v, k=k, sd=sd: stats.norm.logpdf(v, mean[k], sd),
                                       mean[k] - 9 * sd, mean[k] + 9 * sd)
        cases.append((name, (lambda rng, n, k=k: draw_beta(rng, n)[:, k]), grid))

    resid = t.logit_b - t.X @ t.beta
    cases.append((
        "sigma_b2",
        lambda rng, n: np.array([cond.sample_sigma_b2(resid, hp, rng) for _ in range(n)]),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.norm.logpdf(resid, 0, math.sqrt(v)))
            + stats.invgamma.logpdf(v, hp.a_sigma_b, scale=hp.b_sigma_b),
            0.05, 3.0),
    ))
    cases.append((
        "alpha",
        lambda rng, n: np.array([cond.sample_alpha(t.alpha_x, t.sigma_delta2, hp, rng) for _ in range(n)]),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.norm.logpdf(t.alpha_x, v, math.sqrt(t.sigma_delta2)))
            + stats.norm.logpdf(v, hp.mu_alpha, hp.sigma_alpha),
            5.5, 8.5),
    ))
    cases.append((
        "sigma_delta2",
        lambda rng, n: np.array([cond.sample_sigma_delta2(t.alpha_x, t.alpha, hp, rng) for _ in range(n)]),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.norm.logpdf(t.alpha_x, t.alpha, math.sqrt(v)))
            + stats.invgamma.logpdf(v, hp.a_delta, scale=hp.b_delta),
            0.02, 4.0),
    ))
    cases.append((
        "b_tau",
        lambda rng, n: np.array([cond.sample_b_tau(t.a_tau, t.tau2, hp, rng) for _ in range(n)]),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.invgamma.logpdf(t.tau2, t.a_tau, scale=v))
            + stats.gamma.logpdf(v, hp.k_b, scale=hp.theta_b),
            0.05, 8.0),
    ))

    # training alpha_x / tau_x of tweet 0 from its observed log reaction times
    n, ls = t.log_s.size, t.log_s
    tau2_0, ax_0 = float(t.tau2[0]), float(t.alpha_x[0])
    cases.append((
        "alpha_x (training)",
        lambda rng, m: cond.alpha_x_gibbs(n, ls.sum(), tau2_0, t.alpha, t.sigma_delta2, rng.random(m)),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.lognorm.logpdf(np.exp(ls), math.sqrt(tau2_0), scale=math.exp(v)))
            + stats.norm.logpdf(v, t.alpha, math.sqrt(t.sigma_delta2)),
            ax_0 - 8, ax_0 + 8),
    ))
    ss = float(np.sum((ls - ax_0) ** 2))
    cases.append((
        "tau_x^2 (training)",
        lambda rng, m: cond.tau2_gibbs(n, ss, t.a_tau, t.b_tau, rng.random(m)),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.norm.logpdf(ls, ax_0, math.sqrt(v)))
            + stats.invgamma.logpdf(v, t.a_tau, scale=t.b_tau),
            0.1, 100.0),
    ))
    total = int(t.M.sum())
    V = t.M.size
    cases.append((
        "lambda (strawman)",
        lambda rng, m: np.array([cond.sample_lambda(total, V, hp, rng) for _ in range(m)]),
        GridDensity.from_logpdf(
            lambda v: _logsum(stats.poisson.logpmf(t.M, v))
            + stats.gamma.logpdf(v, hp.k_lambda, scale=hp.theta_lambda),
            max(1e-3, total / V - 5), total / V + 5),
    ))
    return cases


# ---------------------------------------------------------------------------
# Metropolis oracles (criterion 2): (name, chain(rng) -> draws, GridDensity)
# ---------------------------------------------------------------------------


def _uniforms(rng, k):
    return lambda: rng.random(k) + 2.0**-54


def _censor_logpdf(t: Toy, ax, t2):
    q = stats.norm.logsf(t.log_elapsed, ax, math.sqrt(t2))
    return _logsum((t.M_c - t.m_c) * q)


def _collapsed_censor_logpdf(t: Toy, ax, t2):
    q = stats.norm.sf(t.log_elapsed, ax, math.sqrt(t2))
    b = special.expit(t.logit_b_c)
    return _logsum((t.f_c - t.m_c) * np.log1p(-b + b * q))


def mh_cases(t: Toy, n_steps: int = N_MH):
    hp = t.hp
    cases = []
    j = 3  # vertex with a moderately informative binomial likelihood
    mu_j = float(t.X[j] @ t.beta)
    sb = math.sqrt(t.sigma_b2)
    Mj, fj = np.array([t.M[j]]), np.array([t.f[j]])

    def b_chain(rng):
        u = _uniforms(rng, 2)
        def step(x):
            a, b = u()
            return cond.logit_b_mh(x, Mj, fj, mu_j, sb, a, b)[0]
        return run_chain(step, np.array([mu_j]), n_steps)

    cases.append(("logit b_j", b_chain, GridDensity.from_logpdf(
        lambda v: stats.norm.logpdf(v, mu_j, sb)
        + stats.binom.logpmf(t.M[j], t.f[j], special.expit(v)), mu_j - 8 * sb, mu_j + 8 * sb)))

    # collapsed b_j of a censored vertex: latent degree summed out
    c = 1
    log_q_c = float(stats.norm.logsf(t.log_elapsed[c], t.alpha_x[0], math.sqrt(t.tau2[0])))
    mc, fc = np.array([t.m_c[c]]), np.array([t.f_c[c]])

    def bm_chain(rng):
        u = _uniforms(rng, 2)
        def step(x):
            a, b = u()
            return cond.logit_b_marginal_mh(x, mc, fc, log_q_c, mu_j, sb, a, b)[0]
        return run_chain(step, np.array([mu_j]), n_steps)

    def bm_logpdf(v):
        m, f = int(mc[0]), int(fc[0])
        like = sum(math.comb(M, m) * math.exp(log_q_c) ** (M - m) * stats.binom.pmf(M, f, special.expit(v))
                   for M in range(m, f + 1))
        return stats.norm.logpdf(v, mu_j, sb) + math.log(like)

    cases.append(("logit b_j (collapsed)", bm_chain,
                  GridDensity.from_logpdf(bm_logpdf, mu_j - 8 * sb, mu_j + 8 * sb, n=4001)))

    # random-walk b steps (binomial and degree-marginal likelihoods)
    step_j = cond.b_step_sizes(Mj)

    def brw_chain(rng):
        u = _uniforms(rng, 2)
        def step(x):
            a, b = u()
            return cond.logit_b_rw(x, mu_j, sb, step_j, a, b, M=Mj, f=fj)[0]
        return run_chain(step, np.array([mu_j]), n_steps)

    cases.append(("logit b_j (random walk)", brw_chain, cases[0][2]))

    def bmrw_chain(rng):
        u = _uniforms(rng, 2)
        st = cond.b_step_sizes(mc)
        def step(x):
            a, b = u()
            return cond.logit_b_rw(x, mu_j, sb, st, a, b, m=mc, f=fc, log_q=log_q_c)[0]
        return run_chain(step, np.array([mu_j]), n_steps)

    cases.append(("logit b_j (collapsed, random walk)", bmrw_chain, cases[1][2]))

    # a_tau random walk
    def a_chain(rng):
        def step(x):
            return cond.sample_a_tau(x, t.tau2, t.b_tau, hp, rng)[0]
        return run_chain(step, t.a_tau, n_steps)

    cases.append(("a_tau", a_chain, GridDensity.from_logpdf(
        lambda v: _logsum(stats.invgamma.logpdf(t.tau2, v, scale=t.b_tau))
        + stats.lognorm.logpdf(v, hp.sigma_a, scale=math.exp(hp.mu_a)), 1e-3, 6.0)))

    # prediction alpha_x / tau_x of a partially observed tweet: observed
    # reaction times plus censored vertices with latent degrees M_c
    n, ls = t.log_s.size, t.log_s
    tau2_0, ax_0 = float(t.tau2[0]), float(t.alpha_x[0])
    tw = np.zeros(t.m_c.size, dtype=np.int64)
    for scheme, cens_fn, oracle in (
        ("paper", cond.survival_term(tw, t.log_elapsed, t.M_c - t.m_c, 1), _censor_logpdf),
        ("collapsed", cond.marginal_binomial_term(tw, t.log_elapsed, t.f_c - t.m_c, t.logit_b_c, 1),
         _collapsed_censor_logpdf),
    ):
        def ax_chain(rng, cens=cens_fn):
            u = _uniforms(rng, 4)
            t2 = np.array([tau2_0])
            def step(x):
                a, b, c, d = u()
                x = cond.alpha_x_mh(x, t2, n, ls.sum(), t.alpha, t.sigma_delta2, cens, a, b)[0]
                return cond.alpha_x_independence_mh(x, t2, n, ls.sum(), t.alpha, t.sigma_delta2, cens, c, d)[0]
            return run_chain(step, np.array([ax_0]), n_steps)

        cases.append((f"alpha_x (prediction, {scheme})", ax_chain, GridDensity.from_logpdf(
            lambda v, o=oracle: _logsum(stats.norm.logpdf(ls, v, math.sqrt(tau2_0)))
            + stats.norm.logpdf(v, t.alpha, math.sqrt(t.sigma_delta2)) + o(t, v, tau2_0),
            ax_0 - 8, ax_0 + 8)))

        def t2_chain(rng, cens=cens_fn):
            u = _uniforms(rng, 2)
            a_arr = np.array([ax_0])
            ss = np.array([float(np.sum((ls - ax_0) ** 2))])
            def step(x):
                a, b = u()
                return cond.tau2_mh(a_arr, x, n, ss, t.a_tau, t.b_tau, cens, a, b)[0]
            return run_chain(step, np.array([tau2_0]), n_steps)

        cases.append((f"tau_x^2 (prediction, {scheme})", t2_chain, GridDensity.from_logpdf(
            lambda v, o=oracle: _logsum(stats.norm.logpdf(ls, ax_0, math.sqrt(v)))
            + stats.invgamma.logpdf(v, t.a_tau, scale=t.b_tau) + o(t, ax_0, v),
            0.05, 60.0)))
    return cases


# ---------------------------------------------------------------------------
# Latent degree fixture: f = 3, b = 1/2, m = 1, q = 1/2 -> (4/9, 4/9, 1/9)
# ---------------------------------------------------------------------------

M_FIXTURE = dict(m=1, f=3, logit_b=0.0, log_q=math.log(0.5))
M_SUPPORT = (1, 2, 3)


def m_fixture_pmf():
    """Enumerated C(M, m) q^(M - m) Bi(M | f, b), normalised."""
    m, f = M_FIXTURE["m"], M_FIXTURE["f"]
    q, b = math.exp(M_FIXTURE["log_q"]), special.expit(M_FIXTURE["logit_b"])
    w = np.array([math.comb(M, m) * q ** (M - m) * stats.binom.pmf(M, f, b) for M in M_SUPPORT])
    return w / w.sum()


def m_chain(rng, n_steps: int = N_MH):
    m, f = np.array([M_FIXTURE["m"]]), np.array([M_FIXTURE["f"]])
    lb, lq = np.array([M_FIXTURE["logit_b"]]), np.array([M_FIXTURE["log_q"]])
    u = _uniforms(rng, 2)

    def step(x):
        a, b = u()
        return cond.offspring_mh(x, m, f, lb, lq, np.array([a]), np.array([b]))[0]

    return run_chain(step, m.copy(), n_steps)


def m_exact_draws(rng, n: int = N_MH):
    k = M_FIXTURE
    ones = np.ones(n, dtype=np.int64)
    return cond.offspring_exact(k["m"] * ones, k["f"] * ones, np.full(n, k["logit_b"]),
                                np.full(n, k["log_q"]), rng.random(n) + 2.0**-54)
