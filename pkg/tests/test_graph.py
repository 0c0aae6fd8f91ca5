import itertools
import json

import numpy as np
import pytest

from app.core.graph import (
    GraphDistributions,
    GraphFormatError,
    IsomorphismIndex,
    LabeledGraph,
    LabelSpaces,
    canonical_hash,
    edges_within,
    exact_isomorphic,
    pair_indices,
    read_dataset,
    read_graphs,
    subgraph_of,
    write_graphs,
)
from tests.conftest import graph_from_pairs, random_graph, random_permutation


def test_label_spaces_reject_empty_spaces():
    with pytest.raises(ValueError):
        LabelSpaces(0, 1)
    with pytest.raises(ValueError):
        LabelSpaces(1, 0)
    assert LabelSpaces(3, 2).edge_states == 3


def test_edges_are_normalized_and_zero_labels_dropped():
    g = LabeledGraph(3, [0, 1, 0], [(2, 0, 1), (1, 2, 0)])
    assert g.edges == ((0, 2, 1),)
    assert g.label(2, 0) == 1
    assert g.label(1, 2) == 0


def test_self_loops_rejected():
    with pytest.raises(ValueError):
        LabeledGraph(2, [0, 0], [(1, 1, 1)])


def test_subgraph_of_reflexive(c4):
    assert subgraph_of(c4, c4)


def test_subgraph_of_edge_deletion(c4):
    assert subgraph_of(c4.remove_edges([(0, 1)]), c4)
    assert not subgraph_of(c4, c4.remove_edges([(0, 1)]))


def test_subgraph_of_label_mismatch():
    a = LabeledGraph(3, [0, 0, 0], [(1, 2, 1)])
    g = LabeledGraph(3, [0, 0, 0], [(1, 2, 2)])
    assert not subgraph_of(a, g)


def test_subgraph_of_size_mismatch(c4):
    with pytest.raises(ValueError):
        subgraph_of(c4, LabeledGraph.empty(3))


def test_edges_within_ignores_node_labels(c4):
    relabeled = c4.with_node_labels([1, 1, 1, 1])
    assert edges_within(c4.remove_edges([(0, 3)]), relabeled)
    assert not subgraph_of(c4, relabeled)


def test_hash_invariant_under_permutation(rng):
    for _ in range(100):
        g = random_graph(int(rng.integers(2, 21)), 0.3, rng, b=3)
        expected = canonical_hash(g)
        for _ in range(100):
            assert canonical_hash(g.permute(random_permutation(g.n, rng))) == expected
        assert exact_isomorphic(g, g.permute(random_permutation(g.n, rng)))


def _random_labeled(n, num_edges, node_labels, rng):
    pairs = list(itertools.combinations(range(n), 2))
    chosen = rng.choice(len(pairs), size=num_edges, replace=False) if num_edges else []
    return LabeledGraph(n, node_labels, [(*pairs[k], int(rng.integers(1, 3))) for k in chosen])


def _isomorphic_by_search(a, g):
    return any(a.permute(perm) == g for perm in itertools.permutations(range(a.n)))


@pytest.mark.parametrize("n", range(1, 7))
def test_exact_isomorphic_agrees_with_permutation_search(n):
    rng = np.random.default_rng(n)
    max_edges = n * (n - 1) // 2
    agreements = {True: 0, False: 0}
    for _ in range(40):
        labels = rng.integers(0, 2, size=n).tolist()
        a = _random_labeled(n, int(rng.integers(0, max_edges + 1)), labels, rng)
        if rng.random() < 0.5:
            g = a.permute(random_permutation(n, rng))
        else:
            g = _random_labeled(n, a.num_edges, rng.permutation(labels).tolist(), rng)
        expected = _isomorphic_by_search(a, g)
        assert exact_isomorphic(a, g) == expected, (a, g)
        agreements[expected] += 1
    assert agreements[True] > 0


def test_hash_separates_path_and_triangle():
    p3 = graph_from_pairs(3, [(0, 1), (1, 2)])
    c3 = graph_from_pairs(3, [(0, 1), (1, 2), (0, 2)])
    assert canonical_hash(p3) != canonical_hash(c3)


def test_refinement_blind_pair_caught_by_exact_test(cube_and_two_k4):
    cube, two_k4 = cube_and_two_k4
    assert canonical_hash(cube) == canonical_hash(two_k4)
    assert not exact_isomorphic(cube, two_k4)


def test_exact_isomorphic_degree_sequences(path4, star3):
    assert not exact_isomorphic(path4, star3)


def test_exact_isomorphic_respects_labels(c4):
    assert not exact_isomorphic(c4, c4.with_node_labels([1, 0, 0, 0]))
    assert exact_isomorphic(c4.with_node_labels([1, 0, 0, 0]), c4.with_node_labels([0, 0, 1, 0]))


def test_isomorphism_index_deduplicates(c4, path4):
    index = IsomorphismIndex()
    assert index.add(c4)
    assert not index.add(c4.permute([2, 0, 3, 1]))
    assert index.add(path4)
    assert path4 in index


def test_pair_indices_row_major():
    rows, cols = pair_indices(4)
    assert list(zip(rows.tolist(), cols.tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_distribution_edge_lookup_matches_pair_order():
    n = 5
    rows, cols = pair_indices(n)
    edge_dist = np.zeros((len(rows), 2))
    edge_dist[:, 0] = np.arange(len(rows))
    dists = GraphDistributions(np.ones((n, 1)), edge_dist)
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        assert dists.edge(i, j)[0] == k
        assert dists.edge(j, i)[0] == k


def test_distribution_validate_rejects_bad_rows():
    with pytest.raises(ValueError):
        GraphDistributions(np.array([[0.5, 0.6]]), np.zeros((0, 2))).validate()


def test_write_read_round_trip(tmp_path, rng):
    graphs = [random_graph(n, 0.3, rng, b=2) for n in (0, 1, 4, 7)]
    path = tmp_path / "graphs.jsonl"
    write_graphs(graphs, path, LabelSpaces(2, 1), config={"seed": 1})
    dataset = read_dataset(path)
    assert dataset.graphs == graphs
    assert dataset.label_spaces == LabelSpaces(2, 1)
    assert dataset.header["config"] == {"seed": 1}


def test_empty_file_reads_as_empty_list(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_graphs(path) == []


def test_malformed_record_names_line_and_field(tmp_path):
    path = tmp_path / "bad.jsonl"
    header = {"b": 1, "c": 1, "count": 2, "schema": "graph-container/1"}
    records = [
        {"n": 2, "node_labels": [0, 0], "edges": [[0, 1, 1]]},
        {"n": 2, "node_labels": [0, 0], "edges": [[1, 0, 1]]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in [header] + records) + "\n")
    with pytest.raises(GraphFormatError) as err:
        read_graphs(path)
    assert err.value.line == 3
    assert err.value.field_name == "edges"


def test_label_outside_header_space_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"b": 1, "c": 1}) + "\n" + json.dumps({"n": 1, "node_labels": [3], "edges": []}) + "\n")
    with pytest.raises(GraphFormatError) as err:
        read_graphs(path)
    assert err.value.field_name == "node_labels"


def test_write_rejects_graph_outside_label_space(tmp_path):
    with pytest.raises(ValueError):
        write_graphs([LabeledGraph(1, [2])], tmp_path / "x.jsonl", LabelSpaces(2, 1))


def test_header_found_after_leading_blank_lines(tmp_path, path4):
    source = tmp_path / "graphs.jsonl"
    write_graphs([path4], source, LabelSpaces(2, 1))
    padded = tmp_path / "padded.jsonl"
    padded.write_text("\n\n" + source.read_text())
    dataset = read_dataset(padded)
    assert dataset.graphs == [path4]
    assert dataset.label_spaces == LabelSpaces(2, 1)
