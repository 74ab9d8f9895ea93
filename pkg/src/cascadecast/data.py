"""Retweet cascade data model, JSON-Lines ingestion and observation prefixes.

Vertices of a cascade are indexed with the root at 0 and the retweet
events at ``1..M`` in file order.  All times are seconds since the root
tweet.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

TRAINING = "training"
PREDICTION = "prediction"

# A child retweeting at exactly its parent's time gets this reaction time.
TIE_REACTION_TIME = 1.0


class CascadeDataError(ValueError):
    """Malformed or inconsistent cascade data."""


@dataclass(frozen=True)
class RetweetEvent:
    user_id: str
    time: float
    parent_user_id: Optional[str]
    followers: int


@dataclass(frozen=True, eq=False)
class RetweetGraph:
    """One root tweet and its retweet tree.

    ``events`` are the raw retweets in input order.  The array fields are
    filled by :func:`derive_structure` and indexed by vertex (root = 0).
    ``meta`` carries free-form annotations, e.g. the generating parameters
    of a simulated cascade.
    """

    tweet_id: str
    root: RetweetEvent
    events: tuple[RetweetEvent, ...]
    parent: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    followers: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    reaction_time: Optional[np.ndarray] = None
    out_degree: Optional[np.ndarray] = None
    order: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_retweets(self) -> int:
        """Final retweet count M^x (number of non-root events)."""
        return len(self.events)

    @property
    def n_vertices(self) -> int:
        return len(self.events) + 1

    @property
    def is_derived(self) -> bool:
        return self.out_degree is not None

    @property
    def lifetime(self) -> float:
        """Time of the last retweet (0 for a root-only cascade)."""
        if not self.events:
            return 0.0
        return float(max(e.time for e in self.events))

    def user_ids(self) -> list[str]:
        return [self.root.user_id] + [e.user_id for e in self.events]


@dataclass(frozen=True, eq=False)
class ObservedCascade:
    """A time-censored prefix of a derived cascade.

    Attributes
    ----------
    graph : RetweetGraph
        The underlying cascade (may be fully known, as in back-testing).
    t_obs : float
        Censoring time t^x in seconds.
    included : ndarray of int
        Observed vertex indices in arrival order; ``included[0]`` is the root.
    observed_degree : ndarray of int
        m_j(t^x) for each entry of ``included``.
    fraction : float or None
        Observation fraction that produced the prefix, if any.
    """

    graph: RetweetGraph
    t_obs: float
    included: np.ndarray
    observed_degree: np.ndarray
    fraction: Optional[float] = None

    @property
    def tweet_id(self) -> str:
        return self.graph.tweet_id

    @property
    def n_observed(self) -> int:
        """m^x(t^x): number of observed retweets (root excluded)."""
        return len(self.included) - 1

    @property
    def elapsed(self) -> np.ndarray:
        """t^x - T_j for each observed vertex (non-negative)."""
        return self.t_obs - self.graph.times[self.included]

    @property
    def followers(self) -> np.ndarray:
        return self.graph.followers[self.included]

    @property
    def depth(self) -> np.ndarray:
        return self.graph.depth[self.included]

    @property
    def reaction_times(self) -> np.ndarray:
        """Reaction times of the observed non-root vertices."""
        return self.graph.reaction_time[self.included[1:]]

    @property
    def true_total(self) -> int:
        return self.graph.n_retweets

    @property
    def step_ahead_total(self) -> int:
        """Eventual child count summed over the observed vertices (back-testing only)."""
        return int(self.graph.out_degree[self.included].sum())


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of cascades with training/prediction roles.

    ``roles`` maps tweet id to :data:`TRAINING` or :data:`PREDICTION`; an
    empty mapping means the dataset has not been partitioned yet.
    ``observations`` maps prediction tweet ids to their observed prefixes.
    """

    cascades: tuple[RetweetGraph, ...]
    roles: Mapping[str, str] = field(default_factory=dict)
    observations: Mapping[str, ObservedCascade] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    def get(self, tweet_id: str) -> RetweetGraph:
        for g in self.cascades:
            if g.tweet_id == tweet_id:
                return g
        raise KeyError(tweet_id)

    @property
    def training(self) -> list[RetweetGraph]:
        return [g for g in self.cascades if self.roles.get(g.tweet_id) == TRAINING]

    @property
    def prediction(self) -> list[RetweetGraph]:
        return [g for g in self.cascades if self.roles.get(g.tweet_id) == PREDICTION]

    def with_roles(self, roles: Mapping[str, str]) -> "Dataset":
        return dataclasses.replace(self, roles=dict(roles), observations={})

    def observe(self, fraction: float) -> "Dataset":
        """Attach prefixes at ``fraction`` to every prediction cascade."""
        obs = {g.tweet_id: observation_prefix(g, fraction) for g in self.prediction}
        return dataclasses.replace(self, observations=obs)

    def derived(self) -> "Dataset":
        return dataclasses.replace(
            self, cascades=tuple(derive_structure(g) for g in self.cascades)
        )


# ---------------------------------------------------------------------------
# JSON-Lines I/O
# ---------------------------------------------------------------------------


def _graph_from_record(rec: dict, lineno: int) -> RetweetGraph:
    try:
        tweet_id = str(rec["tweet_id"])
        root_rec = rec["root"]
        root = RetweetEvent(str(root_rec["user_id"]), 0, None, int(root_rec["followers"]))
        events = tuple(
            RetweetEvent(str(e["user_id"]), e["time"], str(e["parent_user_id"]), int(e["followers"]))
            for e in rec.get("events", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CascadeDataError(f"line {lineno}: malformed cascade record ({exc!r})") from exc

    seen = {root.user_id}
    for e in events:
        if not isinstance(e.time, (int, float)) or isinstance(e.time, bool) or e.time < 0:
            raise CascadeDataError(
                f"line {lineno}: tweet {tweet_id}: user {e.user_id} has invalid time {e.time!r}"
            )
        if e.followers < 0:
            raise CascadeDataError(
                f"line {lineno}: tweet {tweet_id}: user {e.user_id} has negative followers"
            )
        if e.user_id in seen:
            raise CascadeDataError(
                f"line {lineno}: tweet {tweet_id}: duplicate user {e.user_id}"
            )
        seen.add(e.user_id)
    for e in events:
        if e.parent_user_id not in seen:
            raise CascadeDataError(
                f"line {lineno}: tweet {tweet_id}: user {e.user_id} references unknown "
                f"parent {e.parent_user_id}"
            )
    if root.followers < 0:
        raise CascadeDataError(f"line {lineno}: tweet {tweet_id}: root has negative followers")
    return RetweetGraph(tweet_id=tweet_id, root=root, events=events)


def load_dataset(path) -> Dataset:
    """Read a JSON-Lines cascade file (one cascade object per line).

    Blank lines are skipped.  Derived fields are left unset; call
    :meth:`Dataset.derived` or :func:`derive_structure` afterwards.
    """
    cascades = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CascadeDataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            cascades.append(_graph_from_record(rec, lineno))
    ids = [g.tweet_id for g in cascades]
    if len(set(ids)) != len(ids):
        raise CascadeDataError("duplicate tweet_id in dataset")
    return Dataset(tuple(cascades))


def graph_to_record(graph: RetweetGraph) -> dict:
    return {
        "tweet_id": graph.tweet_id,
        "root": {"user_id": graph.root.user_id, "followers": graph.root.followers},
        "events": [
            {
                "user_id": e.user_id,
                "time": e.time,
                "parent_user_id": e.parent_user_id,
                "followers": e.followers,
            }
            for e in graph.events
        ],
    }


def dumps_dataset(cascades: Iterable[RetweetGraph]) -> str:
    return "".join(json.dumps(graph_to_record(g)) + "\n" for g in cascades)


def save_dataset(cascades: Iterable[RetweetGraph], path) -> None:
    Path(path).write_text(dumps_dataset(cascades), encoding="utf-8")


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------


def derive_structure(graph: RetweetGraph) -> RetweetGraph:
    """Populate parents, depths, reaction times, out-degrees and arrival order.

    Raises :class:`CascadeDataError` if the parent links do not form a tree
    rooted at the root user, if a retweet precedes its parent, or if a
    vertex has more children than followers.
    """
    n = graph.n_vertices
    ids = graph.user_ids()
    index = {uid: i for i, uid in enumerate(ids)}
    parent = np.full(n, -1, dtype=np.int64)
    times = np.zeros(n, dtype=np.float64)
    followers = np.empty(n, dtype=np.int64)
    followers[0] = graph.root.followers
    for i, e in enumerate(graph.events, start=1):
        try:
            parent[i] = index[e.parent_user_id]
        except KeyError:
            raise CascadeDataError(
                f"tweet {graph.tweet_id}: user {e.user_id} references unknown parent "
                f"{e.parent_user_id}"
            ) from None
        times[i] = float(e.time)
        followers[i] = e.followers

    depth = np.full(n, -1, dtype=np.int64)
    depth[0] = 0
    for i in range(1, n):
        path = []
        j = i
        while depth[j] < 0:
            path.append(j)
            j = parent[j]
            if len(path) > n:
                raise CascadeDataError(
                    f"tweet {graph.tweet_id}: parent links of user {ids[i]} form a cycle"
                )
        d = depth[j]
        for k in reversed(path):
            d += 1
            depth[k] = d

    reaction = np.zeros(n, dtype=np.float64)
    if n > 1:
        reaction[1:] = times[1:] - times[parent[1:]]
        bad = np.flatnonzero(reaction[1:] < 0)
        if bad.size:
            i = bad[0] + 1
            raise CascadeDataError(
                f"tweet {graph.tweet_id}: user {ids[i]} retweets at {times[i]} before its "
                f"parent {ids[parent[i]]} at {times[parent[i]]}"
            )
        reaction[1:][reaction[1:] == 0] = TIE_REACTION_TIME

    out_degree = np.bincount(parent[1:], minlength=n).astype(np.int64)
    over = np.flatnonzero(out_degree > followers)
    if over.size:
        i = over[0]
        raise CascadeDataError(
            f"tweet {graph.tweet_id}: user {ids[i]} has {out_degree[i]} retweeters but only "
            f"{followers[i]} followers"
        )
    order = np.argsort(times, kind="stable")
    return dataclasses.replace(
        graph,
        parent=parent,
        times=times,
        followers=followers,
        depth=depth,
        reaction_time=reaction,
        out_degree=out_degree,
        order=order,
    )


def _ensure_derived(graph: RetweetGraph) -> RetweetGraph:
    return graph if graph.is_derived else derive_structure(graph)


def prefix_size(n_retweets: int, fraction: float) -> int:
    """Number of retweets revealed at ``fraction``: ceil(fraction * M), at least 1."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"observation fraction must lie in (0, 1], got {fraction}")
    # rounding guards against 0.1 * 30 = 3.0000000000000004
    k = math.ceil(round(fraction * n_retweets, 9))
    return min(max(k, 1), n_retweets)


def _observe(graph: RetweetGraph, included: np.ndarray, t_obs: float, fraction) -> ObservedCascade:
    mask = np.zeros(graph.n_vertices, dtype=bool)
    mask[included] = True
    children = included[1:]
    counts = np.bincount(graph.parent[children], minlength=graph.n_vertices)
    return ObservedCascade(
        graph=graph,
        t_obs=float(t_obs),
        included=included,
        observed_degree=counts[included].astype(np.int64),
        fraction=fraction,
    )


def observation_prefix(graph: RetweetGraph, fraction: float) -> ObservedCascade:
    """Reveal the root plus the first ceil(fraction * M) retweets in time order.

    The censoring time is the time of the last revealed retweet.
    """
    graph = _ensure_derived(graph)
    if graph.n_retweets < 1:
        raise ValueError(f"tweet {graph.tweet_id} has no retweets to observe")
    k = prefix_size(graph.n_retweets, fraction)
    included = graph.order[: k + 1]
    return _observe(graph, included, graph.times[included[-1]], fraction)


def observe_until(graph: RetweetGraph, t_obs: float) -> ObservedCascade:
    """Reveal every retweet with time <= ``t_obs``."""
    graph = _ensure_derived(graph)
    if t_obs <= 0:
        raise ValueError("observation time must be positive")
    k = int(np.searchsorted(graph.times[graph.order], t_obs, side="right"))
    return _observe(graph, graph.order[:k], t_obs, None)


def partition(dataset: Dataset, seed: int) -> Dataset:
    """Split cascades 50/50 into training and prediction sets.

    Cascades are sorted by final size and paired consecutively; one member
    of each pair goes to each half.  An unpaired largest cascade is assigned
    at random.
    """
    if len(dataset) < 2:
        raise ValueError("partition needs at least two cascades")
    rng = np.random.default_rng(seed)
    sizes = [g.n_retweets for g in dataset.cascades]
    ranked = sorted(range(len(dataset)), key=lambda i: (sizes[i], dataset.cascades[i].tweet_id))
    roles = {}
    for k in range(0, len(ranked) - 1, 2):
        a, b = ranked[k], ranked[k + 1]
        if rng.random() < 0.5:
            a, b = b, a
        roles[dataset.cascades[a].tweet_id] = TRAINING
        roles[dataset.cascades[b].tweet_id] = PREDICTION
    if len(ranked) % 2:
        last = dataset.cascades[ranked[-1]].tweet_id
        roles[last] = TRAINING if rng.random() < 0.5 else PREDICTION
    return dataset.with_roles(roles)


def make_dataset(
    training: Sequence[RetweetGraph] = (),
    prediction: Sequence[RetweetGraph] = (),
    fraction: Optional[float] = None,
) -> Dataset:
    """Assemble a derived dataset from explicit training/prediction lists."""
    cascades = tuple(_ensure_derived(g) for g in list(training) + list(prediction))
    roles = {g.tweet_id: TRAINING for g in training}
    roles.update({g.tweet_id: PREDICTION for g in prediction})
    ds = Dataset(cascades, roles)
    return ds.observe(fraction) if fraction is not None else ds
