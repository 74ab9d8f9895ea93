import json

import numpy as np
import pytest

from cascadecast.data import RetweetEvent, RetweetGraph, derive_structure


def make_graph(tweet_id, root_followers, events):
    """events: (user, time, parent, followers) tuples; root user is 'r'."""
    return RetweetGraph(
        tweet_id=tweet_id,
        root=RetweetEvent("r", 0, None, root_followers),
        events=tuple(RetweetEvent(*e) for e in events),
    )


@pytest.fixture
def small_graph():
    # r -> a (10 s), r -> b (30 s), a -> c (25 s), c -> d (100 s)
    return derive_structure(
        make_graph(
            "t1",
            1000,
            [("a", 10.0, "r", 50), ("c", 25.0, "a", 20), ("b", 30.0, "r", 5), ("d", 100.0, "c", 0)],
        )
    )


@pytest.fixture
def jsonl_file(tmp_path):
    recs = [
        {"tweet_id": "x", "root": {"user_id": "r", "followers": 100},
         "events": [{"user_id": "a", "time": 5, "parent_user_id": "r", "followers": 3},
                    {"user_id": "b", "time": 8.5, "parent_user_id": "a", "followers": 1}]},
        {"tweet_id": "y", "root": {"user_id": "s", "followers": 7}, "events": []},
    ]
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: spec acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
