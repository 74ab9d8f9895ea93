"""Walk through the forecasting workflow on simulated cascades.

1. simulate a corpus from the paper's fitted global parameters,
2. split it into training and prediction halves and observe the prediction
   cascades at several fractions,
3. fit the hierarchical model and print each tweet's forecast (posterior
   median and 90% interval of the step-ahead total) next to the truth,
4. compare against the benchmark predictors.

Run:  python3 demos/forecast_walkthrough.py  [n_cascades] [iterations]
"""
import sys

import numpy as np

from cascadecast import bench
from cascadecast.cli import prepare
from cascadecast.data import make_dataset
from cascadecast.mcmc import SamplerConfig, rhat_table, sample_posterior
from cascadecast.model import FITTED_GLOBALS, root_boosted_followers, simulate_corpus
from cascadecast.predict import predictive_total

n = int(sys.argv[1]) if len(sys.argv) > 1 else 20
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

graphs = simulate_corpus(n, FITTED_GLOBALS, root_boosted_followers(), np.random.default_rng(1), min_size=1)
corpus = make_dataset(graphs).derived()
print(f"{len(corpus)} cascades, sizes {sorted(g.n_retweets for g in corpus.cascades)}")

config = SamplerConfig(n_iterations=iters, burn_in=iters // 3, seed=1)
for fraction in (0.1, 0.5, 1.0):
    ds = prepare(corpus, partition_seed=1, fraction=fraction)
    samples = sample_posterior(ds, config)
    worst = max(rhat_table(samples).items(), key=lambda kv: kv[1])
    print(f"\nfraction {fraction:g}: max R-hat {worst[1]:.3f} ({worst[0]})")
    print(f"{'tweet':>8} {'m(t)':>6} {'median':>8} {'90% interval':>18} {'step-ahead':>10} {'final':>6}")
    errors = {"model": [], "naive": [], "dynamic-poisson": []}
    for g in ds.prediction:
        obs = ds.observations[g.tweet_id]
        s = predictive_total(samples, obs)
        print(f"{g.tweet_id:>8} {obs.n_observed:>6} {s.median:>8.1f} "
              f"{f'[{s.lower:.0f}, {s.upper:.0f}]':>18} {obs.step_ahead_total:>10} {g.n_retweets:>6}")
        errors["model"].append((s.median, g.n_retweets))
        errors["naive"].append((bench.naive_predict(obs.n_observed), g.n_retweets))
        errors["dynamic-poisson"].append((bench.dp_forecast(obs), g.n_retweets))
    print("MAPE: " + ", ".join(f"{k} {bench.mape(v):.1f}%" for k, v in errors.items()))
