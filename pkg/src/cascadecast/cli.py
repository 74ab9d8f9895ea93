"""Command-line interface: simulate | fit | predict | bench | eda | diag.

Settings come from (highest priority first) command-line flags, a
key-value config file given with ``--config`` and built-in defaults.
Config keys use the flag names (``iters = 3000``, ``partition-seed = 7``).
The log level is read from the ``CASCADECAST_LOG`` environment variable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, bench
from .data import TRAINING, Dataset, dumps_dataset, load_dataset, partition
from .mcmc import SamplerConfig, sample_posterior
from .mcmc.diagnostics import gelman_rubin
from .mcmc.io import read_csv, write_acceptance, write_csv, write_rhat, write_samples
from .model import FITTED_GLOBALS, lognormal_followers, root_boosted_followers, simulate_corpus
from .predict import CAPTURE_NEVER, predictive_total, time_to_capture

log = logging.getLogger("cascadecast")

DEFAULT_FRACTIONS = (0.10, 0.25, 0.40, 0.50, 0.75, 0.90, 1.00)
BENCHMARKS = ("full", "strawman", "naive", "szabo", "follower-regression", "dynamic-poisson")

DEFAULTS = {
    "input": None,
    "out": "out",
    "seed": 0,
    "chains": 3,
    "iters": 3000,
    "burnin": 1000,
    "thinning": 1,
    "fractions": ",".join(f"{f:g}" for f in DEFAULT_FRACTIONS),
    "fraction": 0.5,
    "model": "full",
    "workers": 1,
    "partition-seed": 0,
    "n": 40,
    "follower-law": "root-boosted",
    "max-nodes": 10000,
    "benchmarks": ",".join(BENCHMARKS),
    "level": 0.9,
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def parse_fractions(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        values = [float(v) for v in text]
    else:
        values = [float(v) for v in str(text).replace(" ", "").split(",") if v]
    if not values:
        raise UsageError("no observation fractions given")
    if any(not 0.0 < v <= 1.0 for v in values):
        raise UsageError("fractions must lie in (0, 1]")
    if sorted(set(values)) != values:
        raise UsageError("fractions must be sorted ascending and unique")
    return tuple(values)


_TYPES = {
    "seed": int, "chains": int, "iters": int, "burnin": int, "thinning": int, "workers": int,
    "partition-seed": int, "n": int, "max-nodes": int, "fraction": float, "level": float,
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags."""
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value
    for key, typ in _TYPES.items():
        try:
            settings[key] = typ(settings[key])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {key}: {settings[key]!r}") from exc
    settings["fractions"] = parse_fractions(settings["fractions"])
    if settings["model"] not in ("full", "strawman"):
        raise UsageError("model must be full or strawman")
    if settings["workers"] < 1:
        raise UsageError("workers must be at least 1")
    return settings


def sampler_config(s: dict, model: Optional[str] = None) -> SamplerConfig:
    try:
        return SamplerConfig(
            n_iterations=s["iters"], burn_in=s["burnin"], n_chains=s["chains"],
            thinning=s["thinning"], seed=s["seed"], model=model or s["model"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(s: dict) -> Dataset:
    if not s["input"]:
        raise UsageError("--input is required")
    return load_dataset(s["input"]).derived()


def prepare(dataset: Dataset, partition_seed: int, fraction: float) -> Dataset:
    """Partition 50/50 and observe prediction tweets at ``fraction``.

    Prediction cascades without retweets cannot be observed and are moved
    to the training set.
    """
    ds = partition(dataset, partition_seed)
    roles = dict(ds.roles)
    for g in ds.prediction:
        if g.n_retweets == 0:
            roles[g.tweet_id] = TRAINING
    return ds.with_roles(roles).observe(fraction)


def _out(s: dict) -> Path:
    path = Path(s["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(s: dict) -> list[Path]:
    rng = np.random.default_rng(s["seed"])
    if s["follower-law"] == "root-boosted":
        sampler = root_boosted_followers()
        law = {"kind": "root-boosted", "root_log_mean": 12.0, "root_log_sd": 1.0,
               "log_mean": 6.0, "log_sd": 2.0}
    elif s["follower-law"] == "iid":
        sampler = lognormal_followers()
        law = {"kind": "iid", "log_mean": 6.0, "log_sd": 2.0}
    else:
        raise UsageError("follower-law must be root-boosted or iid")
    if s["n"] < 0:
        raise UsageError("n must be non-negative")
    graphs = simulate_corpus(s["n"], FITTED_GLOBALS, sampler, rng, max_nodes=s["max-nodes"])
    out = _out(s)
    data_path = out / "cascades.jsonl"
    data_path.write_text(dumps_dataset(graphs))
    sidecar = {
        "globals": dataclasses.asdict(FITTED_GLOBALS),
        "follower_law": law,
        "seed": s["seed"],
        "n": s["n"],
        "max_nodes": s["max-nodes"],
        "tweets": {
            g.tweet_id: {"alpha_x": g.meta["alpha_x"], "tau_x": g.meta["tau_x"],
                         "truncated": g.meta["truncated"]}
            for g in graphs
        },
    }
    side_path = out / "cascades.params.json"
    side_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d cascades to %s", len(graphs), data_path)
    return [data_path, side_path]


def cmd_fit(s: dict) -> list[Path]:
    ds = prepare(_load(s), s["partition-seed"], s["fraction"])
    out = _out(s)
    samples = sample_posterior(ds, sampler_config(s), workers=s["workers"])
    paths = [
        write_samples(samples, out / "samples.csv"),
        write_acceptance(samples, out / "acceptance.csv"),
        write_rhat(samples, out / "rhat.csv"),
    ]
    log.info("fit done: %d chains x %d kept draws", len(samples.chains), samples.n_kept)
    return paths


def cmd_predict(s: dict) -> list[Path]:
    data = _load(s)
    out = _out(s)
    rows, by_tweet = [], {}
    for fraction in s["fractions"]:
        ds = prepare(data, s["partition-seed"], fraction)
        samples = sample_posterior(ds, sampler_config(s), workers=s["workers"])
        for g in ds.prediction:
            summ = predictive_total(samples, ds.observations[g.tweet_id], s["level"])
            by_tweet.setdefault(g.tweet_id, []).append(summ)
            rows.append((g.tweet_id, fraction, summ.t_obs, summ.median, summ.lower, summ.upper,
                         g.n_retweets))
        log.info("predicted fraction %g", fraction)
    lvl = f"{round(100 * s['level']):d}"
    paths = [write_csv(out / "forecasts.csv",
                       ("tweet_id", "fraction", "t_x_seconds", "median", f"lo{lvl}", f"hi{lvl}",
                        "true_M"), rows)]
    capture = []
    for tid, summaries in by_tweet.items():
        summaries = sorted(summaries, key=lambda x: x.t_obs)
        t = time_to_capture(summaries, summaries[0].true_total)
        capture.append((tid, summaries[0].true_total, "never" if t == CAPTURE_NEVER else t))
    paths.append(write_csv(out / "capture.csv", ("tweet_id", "true_M", "capture_seconds"), capture))
    return paths


def _mape_row(model, fraction, preds):
    """(model, fraction, n, MAPE, remaining-count MAPE) from (pred, true, m) triples."""
    if not preds:
        return (model, fraction, 0, float("nan"), float("nan"))
    total = float(np.median([bench.ape(p, t) for p, t, _ in preds]))
    rem = [bench.remaining_ape(p, t, m) for p, t, m in preds if t > m]
    return (model, fraction, len(preds), total, float(np.median(rem)) if rem else float("nan"))


def cmd_bench(s: dict) -> list[Path]:
    data = _load(s)
    out = _out(s)
    selected = [b.strip() for b in str(s["benchmarks"]).split(",") if b.strip()]
    unknown = set(selected) - set(BENCHMARKS)
    if unknown:
        raise UsageError(f"unknown benchmarks: {sorted(unknown)}")
    rows, mape_rows, comparison = [], [], []
    compare_at = s["fractions"][-1]
    for fraction in s["fractions"]:
        ds = prepare(data, s["partition-seed"], fraction)
        preds: dict[str, list] = {b: [] for b in selected}
        fits = {}
        for model in ("full", "strawman"):
            if model in selected:
                fits[model] = sample_posterior(ds, sampler_config(s, model), workers=s["workers"])
        szabo = bench.fit_szabo(ds) if "szabo" in selected else None
        follower = bench.fit_follower_regression(ds) if "follower-regression" in selected else None
        for g in ds.prediction:
            obs = ds.observations[g.tweet_id]
            m = obs.n_observed
            for b in selected:
                if b in fits:
                    p = predictive_total(fits[b], obs).median
                elif b == "naive":
                    p = bench.naive_predict(m)
                elif b == "szabo":
                    try:
                        p = bench.predict_szabo(szabo, m, obs.t_obs)
                    except ValueError as exc:  # beta(t) undefined at this time
                        log.warning("szabo: %s: %s", g.tweet_id, exc)
                        rows.append((b, g.tweet_id, fraction, float("nan"), g.n_retweets, float("nan")))
                        continue
                elif b == "follower-regression":
                    p = float(bench.predict_follower_regression(follower, g.root.followers))
                else:
                    p = bench.dp_forecast(obs)
                preds[b].append((p, g.n_retweets, m))
                rows.append((b, g.tweet_id, fraction, float(p), g.n_retweets,
                             bench.ape(p, g.n_retweets)))
        mape_rows += [_mape_row(b, fraction, preds[b]) for b in selected]
        if fraction == compare_at:
            for model, samples in fits.items():
                comparison.append((model, bench.avg_loglik(samples), bench.dic(samples)))
        log.info("benchmarked fraction %g", fraction)
    return [
        write_csv(out / "bench.csv", ("model", "tweet_id", "fraction", "prediction", "true_M", "ape"), rows),
        write_csv(out / "mape.csv", ("model", "fraction", "n", "mape", "remaining_mape"), mape_rows),
        write_csv(out / "comparison.csv", ("model", "LL", "DIC"), comparison),
    ]


def cmd_eda(s: dict) -> list[Path]:
    data = _load(s)
    out = _out(s)
    rep = analysis.eda_report(data)
    tweets = [(t.tweet_id, t.n_retweets, t.alpha_ml, t.tau_ml, t.median_time, t.delta, t.fraction_deep)
              for t in rep.tweets]
    corpus = [("n_tweets", len(rep.tweets)),
              ("n_depth1", rep.depth.n_depth1), ("n_deeper", rep.depth.n_deeper)]
    fitted = [t for t in rep.tweets if not math.isnan(t.alpha_ml)]
    if fitted:
        corpus += [("mean_alpha_ml", float(np.mean([t.alpha_ml for t in fitted]))),
                   ("sd_alpha_ml", float(np.std([t.alpha_ml for t in fitted]))),
                   ("mean_tau_ml", float(np.mean([t.tau_ml for t in fitted])))]
    if rep.correlations is not None:
        c = rep.correlations
        corpus += [("pearson_r", c.pearson_r), ("pearson_p", c.pearson_p),
                   ("kendall_tau", c.kendall_tau), ("kendall_p", c.kendall_p)]
    if rep.regression is not None:
        r = rep.regression
        for name, k in (("beta0", 0), ("beta_f", 1), ("beta_d", 2)):
            corpus += [(f"{name}_hat", float(r.coef[k])), (f"{name}_p", float(r.p_values[k]))]
        corpus += [("regression_n", r.n_used), ("regression_excluded_M_eq_f", r.n_excluded_saturated)]
    corpus += [("note", n) for n in rep.notes]
    ccdf = []
    for g in data.cascades:
        S = g.reaction_time[1:]
        if S.size == 0:
            continue
        a, t = analysis.ml_lognormal(S)
        xs, emp = analysis.empirical_ccdf(S)
        model = analysis.lognormal_ccdf(a, t)(xs) if t > 0 else np.where(xs < math.exp(a), 1.0, 0.0)
        ccdf += [(g.tweet_id, float(x), float(e), float(mv)) for x, e, mv in zip(xs, emp, model)]
    return [
        write_csv(out / "eda_tweets.csv", ("tweet_id", "M", "alpha_ml", "tau_ml", "median_time",
                                           "delta_x", "fraction_depth_gt1"), tweets),
        write_csv(out / "eda_corpus.csv", ("statistic", "value"), corpus),
        write_csv(out / "eda_depth.csv", ("depth", "count"), sorted(rep.depth.histogram.items())),
        write_csv(out / "eda_ccdf.csv", ("tweet_id", "s", "empirical_ccdf", "model_ccdf"), ccdf),
    ]


def cmd_diag(s: dict) -> list[Path]:
    """R-hat and posterior summaries of the global parameters in a samples CSV."""
    if not s["input"]:
        raise UsageError("--input (a samples.csv from `fit`) is required")
    out = _out(s)
    draws: dict[str, dict[int, list]] = {}
    for row in read_csv(s["input"]):
        name = row["parameter_name"]
        if "[" in name:
            continue
        draws.setdefault(name, {}).setdefault(int(row["chain"]), []).append(float(row["value"]))
    rows = []
    for name, chains in draws.items():
        arr = [chains[c] for c in sorted(chains)]
        pooled = np.concatenate(arr)
        lengths = {len(a) for a in arr}
        rhat = gelman_rubin(np.array(arr)) if len(arr) >= 2 and len(lengths) == 1 else "unavailable"
        q05, q50, q95 = np.quantile(pooled, [0.05, 0.5, 0.95])
        rows.append((name, float(pooled.mean()), float(pooled.std(ddof=1)), float(q05), float(q50),
                     float(q95), rhat))
    return [write_csv(out / "diag.csv", ("parameter", "mean", "sd", "q05", "median", "q95", "rhat"), rows)]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "eda": cmd_eda,
    "diag": cmd_diag,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascadecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--input", help="cascade JSON-Lines file (diag: samples CSV)")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", help="random seed (default: 0)")
        p.add_argument("--chains", help="number of MCMC chains (default: 3)")
        p.add_argument("--iters", help="iterations per chain (default: 3000)")
        p.add_argument("--burnin", help="burn-in iterations (default: 1000)")
        p.add_argument("--thinning", help="keep every k-th draw (default: 1)")
        p.add_argument("--fractions", help="comma-separated observation fractions")
        p.add_argument("--fraction", help="observation fraction for `fit` (default: 0.5)")
        p.add_argument("--model", help="full or strawman (default: full)")
        p.add_argument("--workers", help="parallel workers; results do not depend on it")
        p.add_argument("--partition-seed", help="seed of the training/prediction split")
        p.add_argument("--n", help="number of cascades for `simulate` (default: 40)")
        p.add_argument("--follower-law", help="root-boosted or iid follower counts for `simulate`")
        p.add_argument("--max-nodes", help="vertex cap per simulated cascade")
        p.add_argument("--benchmarks", help="comma-separated subset of " + ",".join(BENCHMARKS))
        p.add_argument("--level", help="credible level (default: 0.9)")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CASCADECAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        settings = resolve(args)
        paths = COMMANDS[args.command](settings)
    except (UsageError, ValueError, OSError) as exc:
        print(f"cascadecast {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
