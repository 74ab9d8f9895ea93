import math

import numpy as np
import pytest

from cascadecast.data import (
    PREDICTION,
    TIE_REACTION_TIME,
    TRAINING,
    CascadeDataError,
    Dataset,
    derive_structure,
    dumps_dataset,
    load_dataset,
    make_dataset,
    observation_prefix,
    observe_until,
    partition,
    prefix_size,
    save_dataset,
)
from conftest import make_graph


def test_derived_fields_match_hand_computation(small_graph):
    g = small_graph
    # vertex order: r, a, c, b, d (file order)
    assert g.user_ids() == ["r", "a", "c", "b", "d"]
    np.testing.assert_array_equal(g.parent, [-1, 0, 1, 0, 2])
    np.testing.assert_array_equal(g.depth, [0, 1, 2, 1, 3])
    np.testing.assert_allclose(g.reaction_time, [0, 10, 15, 30, 75])
    np.testing.assert_array_equal(g.out_degree, [2, 1, 1, 0, 0])
    assert g.out_degree.sum() == g.n_retweets == 4
    assert g.lifetime == 100.0


def test_arrival_order_sorts_times(small_graph):
    g = derive_structure(make_graph("t", 10, [("a", 30.0, "r", 1), ("b", 10.0, "r", 1)]))
    np.testing.assert_array_equal(g.order, [0, 2, 1])


def test_tie_gets_one_second_reaction_time():
    g = derive_structure(make_graph("t", 10, [("a", 0.0, "r", 1), ("b", 0.0, "a", 1)]))
    assert g.reaction_time[1] == TIE_REACTION_TIME == g.reaction_time[2]


@pytest.mark.parametrize(
    "events, message",
    [
        ([("a", 5.0, "zz", 1)], "unknown parent"),
        ([("a", 5.0, "b", 1), ("b", 5.0, "a", 1)], "cycle"),
        ([("a", 5.0, "r", 1), ("b", 3.0, "a", 1)], "before its parent"),
        ([("a", 5.0, "r", 1), ("b", 6.0, "a", 1), ("c", 7.0, "a", 1)], "followers"),
    ],
)
def test_structural_errors(events, message):
    with pytest.raises(CascadeDataError, match=message):
        derive_structure(make_graph("t", 10, events))


def test_load_dataset_and_round_trip(jsonl_file, tmp_path):
    ds = load_dataset(jsonl_file).derived()
    assert [g.tweet_id for g in ds] == ["x", "y"]
    x = ds.get("x")
    np.testing.assert_allclose(x.reaction_time, [0, 5, 3.5])
    assert ds.get("y").n_retweets == 0
    out = tmp_path / "again.jsonl"
    save_dataset(ds.cascades, out)
    again = load_dataset(out)
    assert dumps_dataset(again.cascades) == dumps_dataset(ds.cascades)


@pytest.mark.parametrize(
    "line, message",
    [
        ('{"tweet_id": "x"', "invalid JSON"),
        ('{"tweet_id": "x", "events": []}', "malformed"),
        ('{"tweet_id": "x", "root": {"user_id": "r", "followers": 1}, '
         '"events": [{"user_id": "a", "time": -1, "parent_user_id": "r", "followers": 0}]}', "invalid time"),
        ('{"tweet_id": "x", "root": {"user_id": "r", "followers": 1}, '
         '"events": [{"user_id": "r", "time": 1, "parent_user_id": "r", "followers": 0}]}', "duplicate user"),
    ],
)
def test_load_errors_name_the_line(tmp_path, line, message):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(CascadeDataError, match=f"line 1.*{message}|{message}"):
        load_dataset(path)


def test_duplicate_tweet_ids(tmp_path):
    rec = '{"tweet_id": "x", "root": {"user_id": "r", "followers": 1}, "events": []}\n'
    path = tmp_path / "dup.jsonl"
    path.write_text(rec * 2)
    with pytest.raises(CascadeDataError, match="duplicate tweet_id"):
        load_dataset(path)


@pytest.mark.parametrize("n, fraction, expected", [(30, 0.1, 3), (10, 0.25, 3), (7, 1.0, 7), (3, 0.1, 1), (1, 0.5, 1)])
def test_prefix_size(n, fraction, expected):
    assert prefix_size(n, fraction) == expected


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_prefix_size_rejects_bad_fraction(fraction):
    with pytest.raises(ValueError):
        prefix_size(10, fraction)


def test_observation_prefix(small_graph):
    obs = observation_prefix(small_graph, 0.5)
    # first two arrivals: a (10 s), c (25 s)
    np.testing.assert_array_equal(obs.included, [0, 1, 2])
    assert obs.t_obs == 25.0
    assert obs.n_observed == 2
    np.testing.assert_array_equal(obs.observed_degree, [1, 1, 0])
    assert obs.observed_degree.sum() == obs.n_observed
    np.testing.assert_allclose(obs.elapsed, [25, 15, 0])
    np.testing.assert_allclose(obs.reaction_times, [10, 15])
    assert np.all(obs.observed_degree <= small_graph.out_degree[obs.included])
    assert obs.true_total == 4


def test_observe_until(small_graph):
    obs = observe_until(small_graph, 29.0)
    np.testing.assert_array_equal(obs.included, [0, 1, 2])
    assert observe_until(small_graph, 1000.0).n_observed == 4
    # r and a observed: r eventually has a, b and a has c; d's parent is unseen
    early = observe_until(small_graph, 10.0)
    assert (early.step_ahead_total, early.true_total) == (3, 4)
    with pytest.raises(ValueError):
        observe_until(small_graph, 0.0)


def test_prefix_of_empty_cascade_rejected():
    g = derive_structure(make_graph("e", 5, []))
    with pytest.raises(ValueError, match="no retweets"):
        observation_prefix(g, 0.5)


def _corpus(sizes):
    graphs = []
    for k, n in enumerate(sizes):
        events = [(f"u{i}", float(i + 1), "r", 1) for i in range(n)]
        graphs.append(derive_structure(make_graph(f"t{k}", 1000, events)))
    return Dataset(tuple(graphs))


def test_partition_pairs_by_size():
    ds = _corpus([1, 9, 2, 8, 3, 7, 4, 6, 5])
    part = partition(ds, seed=3)
    assert set(part.roles.values()) <= {TRAINING, PREDICTION}
    assert len(part.roles) == 9
    ranked = sorted(ds.cascades, key=lambda g: g.n_retweets)
    for a, b in zip(ranked[0:8:2], ranked[1:8:2]):
        assert {part.roles[a.tweet_id], part.roles[b.tweet_id]} == {TRAINING, PREDICTION}
    assert part.roles == partition(ds, seed=3).roles
    assert any(partition(ds, seed=s).roles != part.roles for s in range(10))


def test_partition_needs_two():
    with pytest.raises(ValueError):
        partition(_corpus([3]), 0)


def test_make_dataset_observes_prediction():
    ds = _corpus([4, 6])
    made = make_dataset([ds.cascades[0]], [ds.cascades[1]], fraction=0.5)
    assert made.training[0].tweet_id == "t0"
    assert made.observations["t1"].n_observed == 3
    assert math.isclose(made.observations["t1"].t_obs, 3.0)
