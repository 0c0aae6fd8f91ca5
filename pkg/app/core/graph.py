"""
Labeled graph representation, label spaces, canonical forms and the
newline-delimited graph container format.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np
from networkx.algorithms.isomorphism import categorical_edge_match, categorical_node_match

from app.config.settings import GRAPH_FILE_SCHEMA

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
EdgeTriple = Tuple[int, int, int]
EdgesLike = Union[Mapping[Pair, int], Iterable[Tuple[int, int, int]]]


class GraphFormatError(ValueError):
    """Malformed record in a graph container file"""

    def __init__(self, line: int, field_name: str, message: str):
        self.line = line
        self.field_name = field_name
        super().__init__(f"line {line}: field '{field_name}': {message}")


class SchemaMismatchError(ValueError):
    """Label spaces or schema ids of two artifacts do not agree"""


@dataclass(frozen=True)
class LabelSpaces:
    """Node type count b and real edge type count c (edge state 0 = no edge)"""
    b: int
    c: int

    def __post_init__(self):
        if self.b < 1 or self.c < 1:
            raise ValueError(f"Label spaces need b >= 1 and c >= 1, got b={self.b}, c={self.c}")

    @property
    def edge_states(self) -> int:
        return self.c + 1

    def check_graph(self, g: "LabeledGraph") -> None:
        if any(x >= self.b for x in g.node_labels):
            raise SchemaMismatchError(f"Node label outside [0, {self.b}) in graph with n={g.n}")
        if any(label > self.c for _, _, label in g.edges):
            raise SchemaMismatchError(f"Edge label above c={self.c} in graph with n={g.n}")

    @classmethod
    def infer(cls, graphs: Iterable["LabeledGraph"]) -> "LabelSpaces":
        b, c = 1, 1
        for g in graphs:
            if g.node_labels:
                b = max(b, max(g.node_labels) + 1)
            if g.edges:
                c = max(c, max(label for _, _, label in g.edges))
        return cls(b=b, c=c)

    def to_dict(self) -> Dict[str, int]:
        return {"b": self.b, "c": self.c}


@lru_cache(maxsize=None)
def pair_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row/column arrays of all unordered pairs i < j, in row-major order"""
    rows, cols = np.triu_indices(n, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def _normalize_edges(n: int, edges: EdgesLike) -> Tuple[EdgeTriple, ...]:
    items = edges.items() if isinstance(edges, Mapping) else edges
    normalized: Dict[Pair, int] = {}
    for item in items:
        if isinstance(edges, Mapping):
            (i, j), label = item
        else:
            i, j, label = item
        i, j, label = int(i), int(j), int(label)
        if i == j:
            raise ValueError(f"Self-loop on node {i}")
        if i > j:
            i, j = j, i
        if i < 0 or j >= n:
            raise ValueError(f"Edge ({i}, {j}) out of range for n={n}")
        if label < 0:
            raise ValueError(f"Negative edge label {label} on ({i}, {j})")
        if label == 0:
            continue
        if (i, j) in normalized and normalized[(i, j)] != label:
            raise ValueError(f"Conflicting labels for pair ({i}, {j})")
        normalized[(i, j)] = label
    return tuple(sorted((i, j, label) for (i, j), label in normalized.items()))


@dataclass(frozen=True)
class LabeledGraph:
    """
    Immutable graph on nodes 0..n-1 with categorical node labels and
    undirected categorical edges stored once per pair (i < j). Absent pairs
    carry label 0.
    """
    n: int
    node_labels: Tuple[int, ...]
    edges: Tuple[EdgeTriple, ...] = ()

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"Node count must be non-negative, got {self.n}")
        labels = tuple(int(x) for x in self.node_labels)
        if len(labels) != self.n:
            raise ValueError(f"Expected {self.n} node labels, got {len(labels)}")
        if any(x < 0 for x in labels):
            raise ValueError("Node labels must be non-negative")
        object.__setattr__(self, "node_labels", labels)
        object.__setattr__(self, "edges", _normalize_edges(self.n, self.edges))

    # --------------------------------------------------
    @classmethod
    def empty(cls, n: int, node_labels: Optional[Iterable[int]] = None) -> "LabeledGraph":
        labels = tuple(node_labels) if node_labels is not None else (0,) * n
        return cls(n, labels, ())

    @classmethod
    def from_networkx(cls, graph: nx.Graph, default_edge_label: int = 1) -> "LabeledGraph":
        nodes = sorted(graph.nodes())
        index = {node: k for k, node in enumerate(nodes)}
        labels = [int(graph.nodes[node].get("label", 0)) for node in nodes]
        edges = [
            (index[u], index[v], int(data.get("label", default_edge_label)))
            for u, v, data in graph.edges(data=True)
        ]
        return cls(len(nodes), labels, edges)

    # --------------------------------------------------
    @cached_property
    def edge_map(self) -> Dict[Pair, int]:
        return {(i, j): label for i, j, label in self.edges}

    @cached_property
    def edge_set(self) -> FrozenSet[Pair]:
        return frozenset((i, j) for i, j, _ in self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def label(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.edge_map.get((i, j), 0)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        """Dense symmetric n x n matrix of edge labels"""
        adj = np.zeros((self.n, self.n), dtype=np.int64)
        for i, j, label in self.edges:
            adj[i, j] = label
            adj[j, i] = label
        return adj

    def pair_labels(self) -> np.ndarray:
        """Edge label of every unordered pair, in pair_indices order"""
        rows, cols = pair_indices(self.n)
        return self.adjacency()[rows, cols]

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from((k, {"label": x}) for k, x in enumerate(self.node_labels))
        graph.add_edges_from((i, j, {"label": label}) for i, j, label in self.edges)
        return graph

    # --------------------------------------------------
    def with_node_labels(self, node_labels: Iterable[int]) -> "LabeledGraph":
        return LabeledGraph(self.n, tuple(node_labels), self.edges)

    def add_edges(self, edges: Iterable[EdgeTriple]) -> "LabeledGraph":
        merged = dict(self.edge_map)
        for i, j, label in edges:
            merged[(min(i, j), max(i, j))] = label
        return LabeledGraph(self.n, self.node_labels, merged)

    def remove_edges(self, pairs: Iterable[Pair]) -> "LabeledGraph":
        drop = {(min(i, j), max(i, j)) for i, j in pairs}
        return LabeledGraph(self.n, self.node_labels, [e for e in self.edges if (e[0], e[1]) not in drop])

    def unlabeled(self) -> "LabeledGraph":
        return LabeledGraph(self.n, (0,) * self.n, [(i, j, 1) for i, j, _ in self.edges])

    def permute(self, perm: Iterable[int]) -> "LabeledGraph":
        """Move node k to position perm[k]"""
        perm = list(perm)
        if sorted(perm) != list(range(self.n)):
            raise ValueError("perm must be a permutation of range(n)")
        labels = [0] * self.n
        for k, x in enumerate(self.node_labels):
            labels[perm[k]] = x
        return LabeledGraph(self.n, labels, [(perm[i], perm[j], label) for i, j, label in self.edges])

    # --------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "node_labels": list(self.node_labels),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LabeledGraph":
        return cls(data["n"], data["node_labels"], [tuple(e) for e in data.get("edges", [])])


@dataclass
class GraphDistributions:
    """
    Per-node distributions over b node types and per-pair distributions over
    c+1 edge states. Pairs follow pair_indices(n) order.
    """
    node_dist: np.ndarray
    edge_dist: np.ndarray

    @property
    def n(self) -> int:
        return self.node_dist.shape[0]

    def edge(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        # offset of row i in the row-major upper triangle
        k = i * self.n - i * (i + 1) // 2 + (j - i - 1)
        return self.edge_dist[k]

    def validate(self, atol: float = 1e-9) -> None:
        for name, dist in (("node_dist", self.node_dist), ("edge_dist", self.edge_dist)):
            if dist.size == 0:
                continue
            if not np.all(np.isfinite(dist)) or dist.min() < -atol or dist.max() > 1 + atol:
                raise ValueError(f"{name} has entries outside [0, 1]")
            if not np.allclose(dist.sum(axis=1), 1.0, atol=atol, rtol=0.0):
                raise ValueError(f"{name} rows do not sum to 1")
        expected_pairs = self.n * (self.n - 1) // 2
        if self.edge_dist.shape[0] != expected_pairs:
            raise ValueError(f"edge_dist has {self.edge_dist.shape[0]} rows, expected {expected_pairs}")


# ==============================
# Relations and canonical forms
# ==============================

def subgraph_of(a: LabeledGraph, g: LabeledGraph) -> bool:
    """Positional containment: same node labels, a's edges present in g with equal labels"""
    if a.n != g.n:
        raise ValueError(f"Node count mismatch: {a.n} vs {g.n}")
    if a.node_labels != g.node_labels:
        return False
    g_map = g.edge_map
    return all(g_map.get((i, j)) == label for i, j, label in a.edges)


def edges_within(a: LabeledGraph, g: LabeledGraph) -> bool:
    """Positional edge containment ignoring node labels"""
    if a.n != g.n:
        raise ValueError(f"Node count mismatch: {a.n} vs {g.n}")
    g_map = g.edge_map
    return all(g_map.get((i, j)) == label for i, j, label in a.edges)


def canonical_hash(g: LabeledGraph) -> str:
    """Weisfeiler-Lehman digest over node and edge labels, refined n rounds"""
    graph = g.to_networkx()
    digest = nx.weisfeiler_lehman_graph_hash(
        graph, node_attr="label", edge_attr="label", iterations=max(g.n, 1)
    )
    return f"{g.n}:{g.num_edges}:{digest}"


def exact_isomorphic(a: LabeledGraph, g: LabeledGraph) -> bool:
    if a.n != g.n or a.num_edges != g.num_edges:
        return False
    if sorted(a.node_labels) != sorted(g.node_labels):
        return False
    if sorted(a.degrees().tolist()) != sorted(g.degrees().tolist()):
        return False
    return nx.is_isomorphic(
        a.to_networkx(),
        g.to_networkx(),
        node_match=categorical_node_match("label", None),
        edge_match=categorical_edge_match("label", None),
    )


class IsomorphismIndex:
    """Hash buckets resolved by exact isomorphism"""

    def __init__(self, graphs: Iterable[LabeledGraph] = ()):
        self._buckets: Dict[str, List[LabeledGraph]] = {}
        for g in graphs:
            self.add(g)

    def __contains__(self, g: LabeledGraph) -> bool:
        return any(exact_isomorphic(g, other) for other in self._buckets.get(canonical_hash(g), []))

    def add(self, g: LabeledGraph) -> bool:
        """Insert g; returns False when an isomorphic graph was already present"""
        bucket = self._buckets.setdefault(canonical_hash(g), [])
        if any(exact_isomorphic(g, other) for other in bucket):
            return False
        bucket.append(g)
        return True


# ==============================
# Container format
# ==============================

@dataclass
class GraphDataset:
    label_spaces: LabelSpaces
    graphs: List[LabeledGraph]
    header: Dict[str, Any] = field(default_factory=dict)


def _header_for(graphs: List[LabeledGraph], label_spaces: Optional[LabelSpaces],
                config: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    spaces = label_spaces or LabelSpaces.infer(graphs)
    header: Dict[str, Any] = {"b": spaces.b, "c": spaces.c, "count": len(graphs), "schema": GRAPH_FILE_SCHEMA}
    if config is not None:
        header["config"] = config
    return header


def write_graphs(graphs: List[LabeledGraph], path: Union[str, Path],
                 label_spaces: Optional[LabelSpaces] = None,
                 config: Optional[Dict[str, Any]] = None) -> None:
    graphs = list(graphs)
    header = _header_for(graphs, label_spaces, config)
    spaces = LabelSpaces(header["b"], header["c"])
    for g in graphs:
        spaces.check_graph(g)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for g in graphs:
            f.write(json.dumps(g.to_dict(), separators=(",", ":")) + "\n")


def _require_int(value: Any, line: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GraphFormatError(line, name, f"expected integer, got {value!r}")
    return value


def _parse_record(record: Any, line: int, spaces: Optional[LabelSpaces]) -> LabeledGraph:
    if not isinstance(record, dict):
        raise GraphFormatError(line, "record", "expected a JSON object")
    n = _require_int(record.get("n"), line, "n")
    if n < 0:
        raise GraphFormatError(line, "n", "must be non-negative")
    labels = record.get("node_labels")
    if not isinstance(labels, list) or len(labels) != n:
        raise GraphFormatError(line, "node_labels", f"expected a list of {n} integers")
    for x in labels:
        _require_int(x, line, "node_labels")
        if x < 0 or (spaces is not None and x >= spaces.b):
            raise GraphFormatError(line, "node_labels", f"label {x} outside node label space")
    edges = record.get("edges", [])
    if not isinstance(edges, list):
        raise GraphFormatError(line, "edges", "expected a list")
    seen = set()
    for e in edges:
        if not isinstance(e, list) or len(e) != 3:
            raise GraphFormatError(line, "edges", f"expected [i, j, label], got {e!r}")
        i, j, label = (_require_int(v, line, "edges") for v in e)
        if not 0 <= i < j < n:
            raise GraphFormatError(line, "edges", f"pair ({i}, {j}) must satisfy 0 <= i < j < n")
        if label < 1 or (spaces is not None and label > spaces.c):
            raise GraphFormatError(line, "edges", f"label {label} outside edge label space")
        if (i, j) in seen:
            raise GraphFormatError(line, "edges", f"duplicate pair ({i}, {j})")
        seen.add((i, j))
    return LabeledGraph(n, labels, [tuple(e) for e in edges])


def read_dataset(path: Union[str, Path]) -> GraphDataset:
    header: Dict[str, Any] = {}
    spaces: Optional[LabelSpaces] = None
    graphs: List[LabeledGraph] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as e:
                raise GraphFormatError(lineno, "record", f"invalid JSON ({e.msg})") from e
            if not graphs and not header and isinstance(record, dict) and "n" not in record and "b" in record:
                b = _require_int(record.get("b"), lineno, "b")
                c = _require_int(record.get("c"), lineno, "c")
                try:
                    spaces = LabelSpaces(b, c)
                except ValueError as e:
                    raise GraphFormatError(lineno, "b", str(e)) from e
                header = record
                continue
            graphs.append(_parse_record(record, lineno, spaces))
    if "count" in header and header["count"] != len(graphs):
        logger.warning("Header of %s announces %d graphs, found %d", path, header["count"], len(graphs))
    return GraphDataset(spaces or LabelSpaces.infer(graphs), graphs, header)


def read_graphs(path: Union[str, Path]) -> List[LabeledGraph]:
    return read_dataset(path).graphs
