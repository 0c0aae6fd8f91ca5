"""
Edge-deletion invariant properties: incremental checkers, full-graph
reference checks and the blocking-edge table.
"""
import copy
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from app.core.graph import LabeledGraph, Pair

logger = logging.getLogger(__name__)


class PropertyName(Enum):
    PLANAR = "planar"
    ACYCLIC = "acyclic"
    LOBSTER = "lobster"
    MAX_DEGREE = "max_degree"
    TRIANGLE_FREE = "triangle_free"
    NONE = "none"


@dataclass(frozen=True)
class PropertySpec:
    name: PropertyName
    k: Optional[int] = None

    def __post_init__(self):
        if self.name == PropertyName.MAX_DEGREE and (self.k is None or self.k < 0):
            raise ValueError(f"max_degree needs a non-negative bound, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "PropertySpec":
        """'planar' | 'acyclic' | 'lobster' | 'triangle_free' | 'max_degree:k' | 'none'"""
        head, _, arg = text.strip().partition(":")
        try:
            name = PropertyName(head)
        except ValueError:
            raise ValueError(f"Unknown property '{text}'") from None
        if name == PropertyName.MAX_DEGREE:
            if not arg.isdigit():
                raise ValueError(f"max_degree needs an integer bound, e.g. max_degree:4 (got '{text}')")
            return cls(name, int(arg))
        if arg:
            raise ValueError(f"Property '{head}' takes no argument")
        return cls(name)

    def __str__(self) -> str:
        return f"{self.name.value}:{self.k}" if self.name == PropertyName.MAX_DEGREE else self.name.value

    def holds(self, g: LabeledGraph) -> bool:
        return full_check(self, g)


# ==============================
# Full-graph reference checks
# ==============================

def is_acyclic(g: LabeledGraph) -> bool:
    if g.n == 0:
        return True
    return nx.is_forest(g.to_networkx())


def is_planar(g: LabeledGraph) -> bool:
    planar, _ = nx.check_planarity(g.to_networkx())
    return planar


def is_lobster_tree(tree: nx.Graph) -> bool:
    """A tree is a lobster iff stripping its leaves twice leaves a path (or nothing)"""
    core = tree.copy()
    for _ in range(2):
        core.remove_nodes_from([v for v, d in core.degree() if d <= 1])
    if core.number_of_nodes() == 0:
        return True
    return max(d for _, d in core.degree()) <= 2


def is_lobster_forest(g: LabeledGraph) -> bool:
    if not is_acyclic(g):
        return False
    graph = g.to_networkx()
    return all(is_lobster_tree(graph.subgraph(nodes)) for nodes in nx.connected_components(graph))


def within_max_degree(g: LabeledGraph, k: int) -> bool:
    return g.n == 0 or int(g.degrees().max()) <= k


def is_triangle_free(g: LabeledGraph) -> bool:
    return sum(nx.triangles(g.to_networkx()).values()) == 0


def full_check(spec: PropertySpec, g: LabeledGraph) -> bool:
    if spec.name == PropertyName.PLANAR:
        return is_planar(g)
    if spec.name == PropertyName.ACYCLIC:
        return is_acyclic(g)
    if spec.name == PropertyName.LOBSTER:
        return is_lobster_forest(g)
    if spec.name == PropertyName.MAX_DEGREE:
        return within_max_degree(g, spec.k)
    if spec.name == PropertyName.TRIANGLE_FREE:
        return is_triangle_free(g)
    return True


def is_connected(g: LabeledGraph) -> bool:
    return g.n > 0 and nx.is_connected(g.to_networkx())


def validate_dataset(graphs: Iterable[LabeledGraph], spec: PropertySpec) -> float:
    """Fraction of graphs satisfying the property; warns when below 1"""
    graphs = list(graphs)
    if not graphs:
        return 1.0
    rate = sum(full_check(spec, g) for g in graphs) / len(graphs)
    if rate < 1.0:
        logger.warning("Only %.1f%% of training graphs satisfy '%s'; constrained sampling "
                       "will still enforce it", 100.0 * rate, spec)
    return rate


# ==============================
# Incremental checkers
# ==============================

class ConstraintChecker(ABC):
    """
    Maintains a graph that satisfies the property and answers whether one more
    edge keeps it satisfied. Accepted edges become part of the state.
    """

    def __init__(self, n: int = 0):
        self.reset(n)

    def reset(self, n: int) -> None:
        self.n = n
        self.queries = 0
        self._edges: Set[Pair] = set()
        self._reset_state()

    @abstractmethod
    def _reset_state(self) -> None:
        ...

    @abstractmethod
    def _accepts(self, i: int, j: int) -> bool:
        ...

    @abstractmethod
    def _commit(self, i: int, j: int) -> None:
        ...

    def try_insert(self, i: int, j: int) -> bool:
        if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
            raise ValueError(f"Invalid pair ({i}, {j}) for n={self.n}")
        pair = (min(i, j), max(i, j))
        if pair in self._edges:
            raise ValueError(f"Pair {pair} is already an edge")
        self.queries += 1
        if not self._accepts(*pair):
            return False
        self._commit(*pair)
        self._edges.add(pair)
        return True

    @property
    def current_edge_count(self) -> int:
        return len(self._edges)

    @property
    def edges(self) -> FrozenSet[Pair]:
        return frozenset(self._edges)

    def load(self, g: LabeledGraph) -> "ConstraintChecker":
        """Reset to g's structure; g must satisfy the property"""
        self.reset(g.n)
        for i, j, _ in g.edges:
            if not self.try_insert(i, j):
                raise ValueError(f"Graph violates {type(self).__name__} at edge ({i}, {j})")
        self.queries = 0
        return self

    def snapshot(self) -> Dict[str, Any]:
        return copy.deepcopy(self.__dict__)

    def restore(self, state: Dict[str, Any]) -> None:
        self.__dict__ = copy.deepcopy(state)


class NullChecker(ConstraintChecker):
    def _reset_state(self) -> None:
        pass

    def _accepts(self, i: int, j: int) -> bool:
        return True

    def _commit(self, i: int, j: int) -> None:
        pass


class AcyclicChecker(ConstraintChecker):
    """Rejects edges closing a cycle: both endpoints already in one component"""

    def _reset_state(self) -> None:
        self._components = UnionFind(range(self.n))

    def _accepts(self, i: int, j: int) -> bool:
        return self._components[i] != self._components[j]

    def _commit(self, i: int, j: int) -> None:
        self._components.union(i, j)


class LobsterChecker(ConstraintChecker):
    """
    Every component must stay a lobster: the union-find gate rejects cycles,
    then the merged component alone is re-tested.
    """

    def _reset_state(self) -> None:
        self._components = UnionFind(range(self.n))
        self._members: Dict[int, Set[int]] = {v: {v} for v in range(self.n)}
        self._adjacency: Dict[int, Set[int]] = {v: set() for v in range(self.n)}

    def _accepts(self, i: int, j: int) -> bool:
        ri, rj = self._components[i], self._components[j]
        if ri == rj:
            return False
        merged = nx.Graph()
        nodes = self._members[ri] | self._members[rj]
        merged.add_nodes_from(nodes)
        merged.add_edges_from((u, v) for u in nodes for v in self._adjacency[u] if u < v)
        merged.add_edge(i, j)
        return is_lobster_tree(merged)

    def _commit(self, i: int, j: int) -> None:
        ri, rj = self._components[i], self._components[j]
        self._components.union(i, j)
        root = self._components[i]
        self._members[root] = self._members.pop(ri) | self._members.pop(rj)
        self._adjacency[i].add(j)
        self._adjacency[j].add(i)


class PlanarChecker(ConstraintChecker):
    """Tentative insert, full left-right planarity test, rollback on failure"""

    def _reset_state(self) -> None:
        self._graph = nx.Graph()
        self._graph.add_nodes_from(range(self.n))

    def _accepts(self, i: int, j: int) -> bool:
        self._graph.add_edge(i, j)
        planar, _ = nx.check_planarity(self._graph)
        self._graph.remove_edge(i, j)
        return planar

    def _commit(self, i: int, j: int) -> None:
        self._graph.add_edge(i, j)


class MaxDegreeChecker(ConstraintChecker):
    def __init__(self, k: int, n: int = 0):
        self.k = k
        super().__init__(n)

    def _reset_state(self) -> None:
        self._degree = np.zeros(self.n, dtype=np.int64)

    def _accepts(self, i: int, j: int) -> bool:
        return self._degree[i] < self.k and self._degree[j] < self.k

    def _commit(self, i: int, j: int) -> None:
        self._degree[i] += 1
        self._degree[j] += 1


class TriangleFreeChecker(ConstraintChecker):
    def _reset_state(self) -> None:
        self._adjacency: Dict[int, Set[int]] = {v: set() for v in range(self.n)}

    def _accepts(self, i: int, j: int) -> bool:
        return not (self._adjacency[i] & self._adjacency[j])

    def _commit(self, i: int, j: int) -> None:
        self._adjacency[i].add(j)
        self._adjacency[j].add(i)


class FullGraphChecker(ConstraintChecker):
    """Non-incremental reference: re-checks the whole would-be graph on every query"""

    def __init__(self, spec: PropertySpec, n: int = 0):
        self.spec = spec
        super().__init__(n)

    def _reset_state(self) -> None:
        pass

    def _accepts(self, i: int, j: int) -> bool:
        edges = [(u, v, 1) for u, v in self._edges] + [(i, j, 1)]
        return full_check(self.spec, LabeledGraph(self.n, (0,) * self.n, edges))

    def _commit(self, i: int, j: int) -> None:
        pass


CheckerFactory = Callable[[int], ConstraintChecker]


def make_checker(spec: PropertySpec, n: int = 0, efficient: bool = True) -> ConstraintChecker:
    if not efficient and spec.name != PropertyName.NONE:
        return FullGraphChecker(spec, n)
    if spec.name == PropertyName.PLANAR:
        return PlanarChecker(n)
    if spec.name == PropertyName.ACYCLIC:
        return AcyclicChecker(n)
    if spec.name == PropertyName.LOBSTER:
        return LobsterChecker(n)
    if spec.name == PropertyName.MAX_DEGREE:
        return MaxDegreeChecker(spec.k, n)
    if spec.name == PropertyName.TRIANGLE_FREE:
        return TriangleFreeChecker(n)
    return NullChecker(n)


def checker_factory(spec: PropertySpec, efficient: bool = True) -> CheckerFactory:
    return lambda n: make_checker(spec, n, efficient)


# ==============================
# Blocking-edge table
# ==============================

class BlockingTable:
    """Pairs rejected earlier in one reverse trajectory; grows only"""

    def __init__(self):
        self._blocked: Set[Pair] = set()

    def block(self, i: int, j: int) -> None:
        self._blocked.add((min(i, j), max(i, j)))

    def __contains__(self, pair: Tuple[int, int]) -> bool:
        i, j = pair
        return (min(i, j), max(i, j)) in self._blocked

    def __len__(self) -> int:
        return len(self._blocked)

    def pairs(self) -> List[Pair]:
        return sorted(self._blocked)
