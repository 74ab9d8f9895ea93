"""CSV dumps of posterior samples and run summaries.

Every file starts with a ``# generated <timestamp>`` line; the remaining
bytes depend only on the run inputs.
"""
from __future__ import annotations

import csv
import io
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .diagnostics import rhat_table
from .sampler import MH_FAMILIES, PosteriorSamples

HEADER_PREFIX = "# generated "


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a CSV with the timestamp line first; floats use repr (round-trip exact)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"{HEADER_PREFIX}{datetime.now(timezone.utc).isoformat()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by :func:`write_csv` (timestamp line skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith(HEADER_PREFIX)]
    return list(csv.DictReader(lines))


def _sample_rows(samples: PosteriorSamples):
    names = samples.param_names
    lay = samples.layout
    for c in samples.chains:
        for k, it in enumerate(c.iterations):
            it = int(it)
            for p, name in enumerate(names):
                yield (c.chain_id, it, name, float(c.globals[k, p]))
            for t, tid in enumerate(lay.tweet_ids):
                yield (c.chain_id, it, f"alpha_x[{tid}]", float(c.alpha_x[k, t]))
                yield (c.chain_id, it, f"tau_x[{tid}]", float(c.tau_x[k, t]))
            for col, t in enumerate(lay.pred_tweets):
                yield (c.chain_id, it, f"total[{lay.tweet_ids[t]}]", int(c.totals[k, col]))


def write_samples(samples: PosteriorSamples, path) -> Path:
    """Long-format dump: (chain, iteration, parameter_name, value)."""
    return write_csv(path, ("chain", "iteration", "parameter_name", "value"), _sample_rows(samples))


def write_acceptance(samples: PosteriorSamples, path) -> Path:
    rows = []
    for c in samples.chains:
        for fam in MH_FAMILIES:
            acc, prop = c.acceptance.accepted[fam], c.acceptance.proposed[fam]
            rows.append((c.chain_id, fam, acc, prop, float(acc / prop) if prop else float("nan")))
    return write_csv(path, ("chain", "update", "accepted", "proposed", "rate"), rows)


def write_rhat(samples: PosteriorSamples, path) -> Path:
    table = rhat_table(samples)
    rows = [(name, "unavailable" if value != value else float(value)) for name, value in table.items()]
    return write_csv(path, ("parameter", "rhat"), rows)
