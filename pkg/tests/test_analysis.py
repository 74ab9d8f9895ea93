import itertools
import math

import numpy as np
import pytest
from scipy import optimize, stats

from cascadecast.analysis import (
    correlations,
    delta_x,
    depth_stats,
    eda_report,
    empirical_ccdf,
    exploratory_logit_regression,
    lognormal_ccdf,
    ml_lognormal,
)
from cascadecast.data import make_dataset
from cascadecast.model import FITTED_GLOBALS, lognormal_followers, simulate_corpus


def kendall_tau_b_bruteforce(x, y):
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx == dy:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def test_ml_lognormal_maximizes_likelihood():
    s = np.random.default_rng(0).lognormal(3.0, 1.2, 200)
    a, t = ml_lognormal(s)
    nll = lambda p: -np.sum(stats.norm.logpdf(np.log(s), p[0], math.exp(p[1])))  # noqa: E731
    res = optimize.minimize(nll, [0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12})
    assert a == pytest.approx(res.x[0], abs=1e-4)
    assert t == pytest.approx(math.exp(res.x[1]), abs=1e-4)


def test_delta_x_and_ccdf():
    s = np.exp([1.0, 2.0, 6.0])
    assert delta_x(s) == pytest.approx((3.0 - 2.0) / 2.0)
    x, c = empirical_ccdf([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(x, [1, 2, 2, 3])
    np.testing.assert_allclose(c, [0.75, 0.5, 0.25, 0.0])
    assert lognormal_ccdf(2.0, 1.0)(math.exp(2.0)) == pytest.approx(0.5)
    np.testing.assert_allclose(lognormal_ccdf(2.0, 0.5)(np.array([3.0, 30.0])),
                               stats.lognorm.sf([3.0, 30.0], 0.5, scale=math.exp(2.0)))


def test_correlations_against_bruteforce():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 6, 40).astype(float)
    y = x + rng.integers(0, 4, 40)
    c = correlations(x, y)
    assert c.kendall_tau == pytest.approx(kendall_tau_b_bruteforce(x, y))
    assert c.pearson_r == pytest.approx(np.corrcoef(x, y)[0, 1])
    n = 40
    t = c.pearson_r * math.sqrt((n - 2) / (1 - c.pearson_r**2))
    assert c.pearson_p == pytest.approx(2 * stats.t.sf(abs(t), n - 2))
    with pytest.raises(ValueError):
        correlations([1, 1, 1], [1, 2, 3])


def test_logit_regression_against_normal_equations():
    # oracle: normal equations on the empirical logits of 1 <= M < f vertices
    rng = np.random.default_rng(2)
    corpus = simulate_corpus(30, FITTED_GLOBALS, lognormal_followers(6.0, 1.0), rng, min_size=5, max_size=400)
    reg = exploratory_logit_regression(corpus)
    M = np.concatenate([g.out_degree for g in corpus])
    f = np.concatenate([g.followers for g in corpus])
    d = np.concatenate([g.depth for g in corpus])
    use = (M >= 1) & (M < f)
    y = np.log(M[use] / (f[use] - M[use]))
    X = np.column_stack([np.ones(use.sum()), np.log(f[use] + 1), np.log(d[use] + 1)])
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(reg.coef, coef, rtol=1e-8)
    assert reg.n_used == use.sum()
    assert reg.n_excluded_saturated == int(np.sum((M >= 1) & (M == f)))
    assert np.all((reg.p_values >= 0) & (reg.p_values <= 1))


def test_depth_stats_and_report(small_graph):
    ds = depth_stats([small_graph])
    assert ds.histogram == {1: 2, 2: 1, 3: 1}
    assert ds.fraction_deep["t1"] == 0.5
    rep = eda_report(make_dataset([small_graph]))
    assert rep.tweets[0].n_retweets == 4
    assert rep.correlations is None and rep.notes
