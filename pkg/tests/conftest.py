import sys

import numpy as np
import pytest

from skipwalk.kg import Kg, PriorAlignment, add_reverse_relations, build_joint_graph
from skipwalk.synthetic import isomorphic_pair


def labeled_pairs(kg1, kg2, pairs):
    return np.array([(kg1.entity_index[a], kg2.entity_index[b]) for a, b in pairs], dtype=np.int64)


def small_joint(n_entities=25, n_relations=4, avg_degree=3.0, prior_fraction=0.3, seed=0):
    """Joint graph of two isomorphic KGs; ``2 * n_entities`` entities."""
    kg1, kg2, al = isomorphic_pair(n_entities, n_relations, avg_degree, seed=seed)
    pairs = labeled_pairs(kg1, kg2, al)
    rng = np.random.default_rng(seed)
    prior = pairs[np.sort(rng.permutation(len(pairs))[: int(round(prior_fraction * len(pairs)))])]
    g = build_joint_graph(add_reverse_relations(kg1), add_reverse_relations(kg2), PriorAlignment(prior))
    return g, kg1, kg2, pairs, prior


@pytest.fixture
def joint50():
    return small_joint()


@pytest.fixture
def tiny_kg():
    return Kg.from_labeled(
        [
            ("alice", "knows", "bob"),
            ("bob", "knows", "carol"),
            ("carol", "likes", "alice"),
            ("alice", "likes", "dave"),
            ("dave", "knows", "bob"),
        ]
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
