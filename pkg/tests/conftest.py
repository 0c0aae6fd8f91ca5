import itertools

import networkx as nx
import numpy as np
import pytest

from app.core.graph import LabeledGraph, LabelSpaces
from app.core.noise import build_schedule


def graph_from_pairs(n, pairs, node_labels=None):
    return LabeledGraph(n, node_labels if node_labels is not None else (0,) * n, [(i, j, 1) for i, j in pairs])


def random_graph(n, p, rng, b=1):
    pairs = [pair for pair in itertools.combinations(range(n), 2) if rng.random() < p]
    return graph_from_pairs(n, pairs, rng.integers(0, b, size=n).tolist())


def random_permutation(n, rng):
    return rng.permutation(n).tolist()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_spaces():
    return LabelSpaces(1, 1)


@pytest.fixture
def c4():
    return graph_from_pairs(4, [(0, 1), (1, 2), (2, 3), (0, 3)])


@pytest.fixture
def path4():
    return graph_from_pairs(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def k4():
    return graph_from_pairs(4, itertools.combinations(range(4), 2))


@pytest.fixture
def k5():
    return graph_from_pairs(5, itertools.combinations(range(5), 2))


@pytest.fixture
def star3():
    return graph_from_pairs(4, [(0, 1), (0, 2), (0, 3)])


@pytest.fixture
def cube_and_two_k4():
    """3-regular on 8 nodes, indistinguishable by colour refinement, not isomorphic"""
    cube = LabeledGraph.from_networkx(nx.convert_node_labels_to_integers(nx.hypercube_graph(3)))
    two_k4 = graph_from_pairs(8, list(itertools.combinations(range(4), 2)) + list(itertools.combinations(range(4, 8), 2)))
    return cube, two_k4


@pytest.fixture
def small_schedule():
    return build_schedule(20, np.array([1.0]))
