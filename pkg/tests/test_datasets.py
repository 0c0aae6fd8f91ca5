import networkx as nx
import numpy as np
import pytest
from scipy import stats

from app.core.constraints import is_acyclic, is_connected, is_lobster_forest, is_planar
from app.core.datasets import (
    DatasetFamily,
    DatasetSpec,
    gen_cellgraph,
    gen_lobster,
    gen_planar,
    gen_tree,
    save_splits,
    split_counts,
    split_graphs,
)
from app.core.graph import LabeledGraph, read_dataset


class ZeroRng:
    """Stands in for a generator whose integer draws are all zero"""

    def integers(self, low, high=None, size=None):
        return np.zeros(size, dtype=np.int64)


def test_trees_have_n_minus_one_edges(rng):
    for g in gen_tree(50, 64, rng):
        assert g.num_edges == 63
        assert is_acyclic(g) and is_connected(g)


def test_two_node_tree_is_an_edge(rng):
    (g,) = gen_tree(1, 2, rng)
    assert g.edge_set == {(0, 1)}


def test_constant_prufer_sequence_decodes_to_star():
    (g,) = gen_tree(1, 5, ZeroRng())
    assert sorted(g.degrees().tolist()) == [1, 1, 1, 1, 4]
    assert g.degrees()[0] == 4


def test_planar_edge_count_matches_triangulations(rng):
    graphs = gen_planar(200, 64, rng)
    assert 170 <= np.mean([g.num_edges for g in graphs]) <= 182
    assert all(is_planar(g) and is_connected(g) for g in graphs[:20])


def test_smallest_planar_graph_is_a_triangle(rng):
    (g,) = gen_planar(1, 3, rng)
    assert g.edge_set == {(0, 1), (0, 2), (1, 2)}
    with pytest.raises(ValueError):
        gen_planar(1, 2, rng)


def test_lobsters_stay_in_node_range(rng):
    for g in gen_lobster(100, rng):
        assert 11 <= g.n <= 99
        assert is_lobster_forest(g) and is_connected(g)


def test_lobster_without_leaves_is_a_path(rng):
    for g in gen_lobster(10, rng, p1=0.0, p2=0.0):
        assert nx.is_isomorphic(g.to_networkx(), nx.path_graph(g.n))


def test_cellgraph_phenotypes_follow_marginals(rng):
    marginals = np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05])
    graphs = gen_cellgraph(150, phenotype_marginals=marginals, rng=rng)
    labels = np.concatenate([g.node_labels for g in graphs])
    assert len(labels) >= 10_000
    observed = np.bincount(labels, minlength=9)
    assert stats.chisquare(observed, marginals * len(labels)).pvalue > 0.001


def test_cellgraphs_are_planar_with_target_degree(rng):
    for g in gen_cellgraph(20, rng=rng):
        assert is_planar(g)
        assert 40 <= g.n <= 120
        assert 2 * g.num_edges / g.n <= 5.0 + 1.0 / g.n


def test_zero_threshold_gives_empty_graphs(rng):
    assert all(g.num_edges == 0 for g in gen_cellgraph(5, rng=rng, threshold=0.0))


def test_cellgraph_rejects_bad_marginals(rng):
    with pytest.raises(ValueError):
        gen_cellgraph(1, phenotype_marginals=[0.5, 0.4], rng=rng)


def test_default_split_counts():
    assert split_counts(200) == (128, 32, 40)


def test_split_is_a_partition(rng):
    graphs = [LabeledGraph.empty(n) for n in range(1, 21)]
    splits = split_graphs(graphs, (12, 3, 5), rng)
    assert (len(splits.train), len(splits.val), len(splits.test)) == (12, 3, 5)
    sizes = sorted(g.n for part in splits.as_dict().values() for g in part)
    assert sizes == list(range(1, 21))


def test_split_rejects_bad_counts(rng):
    graphs = [LabeledGraph.empty(2)] * 5
    with pytest.raises(ValueError):
        split_graphs(graphs, (3, 1, 2), rng)
    with pytest.raises(ValueError):
        split_graphs(graphs, (5, 0, 0), rng)


def test_same_seed_same_dataset():
    spec = DatasetSpec(DatasetFamily.LOBSTER, counts=(6, 2, 2), seed=11)
    first, second = spec.generate(), spec.generate()
    assert first.as_dict() == second.as_dict()


def test_cellgraph_label_spaces():
    assert DatasetSpec(DatasetFamily.CELLGRAPH).label_spaces.b == 9
    assert DatasetSpec(DatasetFamily.TREE).label_spaces.b == 1


def test_saved_splits_carry_config(tmp_path):
    spec = DatasetSpec(DatasetFamily.TREE, counts=(3, 1, 1), n=6, seed=2)
    splits = spec.generate()
    paths = save_splits(splits, tmp_path, spec.label_spaces, {"family": "tree"})
    assert set(paths) == {"train", "val", "test"}
    dataset = read_dataset(paths["train"])
    assert dataset.graphs == splits.train
    assert dataset.header["config"] == {"family": "tree"}
