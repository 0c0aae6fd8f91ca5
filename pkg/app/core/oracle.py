"""
Brute-force ground truth for the projector: uniform-cost edit distance on a
fixed node set, exhaustive optimal projections, optimality checks against
every projector ordering, and stored fixtures where orderings disagree on
how many edges get inserted.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Dict, List, Optional, Set

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from app.core.constraints import PropertyName, PropertySpec, checker_factory, full_check, make_checker
from app.core.graph import EdgeTriple, LabeledGraph, edges_within
from app.core.projector import EnumerationLimitError, candidate_edges, enumerate_projector_outputs

logger = logging.getLogger(__name__)

SUBSET_LIMIT = 16
ORDERING_LIMIT = 8


def ged_uniform(a: LabeledGraph, g: LabeledGraph) -> int:
    """Unit-cost edge insertions and deletions between two graphs on the same nodes"""
    if a.n != g.n:
        raise ValueError(f"Node count mismatch: {a.n} vs {g.n}")
    return len(a.edge_set ^ g.edge_set)


@dataclass(frozen=True)
class GedProjectionProblem:
    g_t: LabeledGraph
    g_hat: LabeledGraph
    prop: PropertySpec

    def __post_init__(self):
        if not edges_within(self.g_t, self.g_hat):
            raise ValueError("g_t must be contained in g_hat")
        if not full_check(self.prop, self.g_t):
            raise ValueError(f"g_t does not satisfy '{self.prop}'")

    @property
    def candidates(self) -> List[EdgeTriple]:
        return candidate_edges(self.g_t, self.g_hat)

    def with_inserted(self, inserted) -> LabeledGraph:
        return LabeledGraph(self.g_hat.n, self.g_hat.node_labels, list(self.g_t.edges) + list(inserted))

    def inserted_count(self, g: LabeledGraph) -> int:
        return g.num_edges - self.g_t.num_edges


def optimal_projections(problem: GedProjectionProblem, max_candidates: int = SUBSET_LIMIT) -> Set[LabeledGraph]:
    """
    Closest property-satisfying graphs to g_hat among supergraphs of g_t
    inside g_hat: the largest valid candidate subsets.
    """
    candidates = problem.candidates
    if len(candidates) > max_candidates:
        raise EnumerationLimitError(f"{len(candidates)} candidates exceed the limit of {max_candidates}")
    for size in range(len(candidates), -1, -1):
        optima = {
            graph for graph in (problem.with_inserted(subset) for subset in combinations(candidates, size))
            if full_check(problem.prop, graph)
        }
        if optima:
            return optima
    return set()


def projector_outputs(problem: GedProjectionProblem, max_candidates: int = ORDERING_LIMIT) -> Set[LabeledGraph]:
    return enumerate_projector_outputs(problem.g_t, problem.g_hat, checker_factory(problem.prop), max_candidates)


def verify_theorem1(problem: GedProjectionProblem) -> bool:
    """Every closest valid graph is returned by some candidate ordering"""
    return optimal_projections(problem) <= projector_outputs(problem)


def candidate_rank(g_t: LabeledGraph, candidates: List[EdgeTriple]) -> int:
    """
    Largest number of candidates insertable into a forest without closing a
    cycle: on the graph whose nodes are g_t's components and whose edges are
    the candidates, components touched minus connected groups formed.
    """
    components = UnionFind(range(g_t.n))
    for i, j, _ in g_t.edges:
        components.union(i, j)
    quotient = nx.Graph()
    for i, j, _ in candidates:
        ri, rj = components[i], components[j]
        quotient.add_nodes_from((ri, rj))
        if ri != rj:
            quotient.add_edge(ri, rj)
    return quotient.number_of_nodes() - nx.number_connected_components(quotient)


def verify_theorem2(problem: GedProjectionProblem) -> bool:
    """Acyclic projections: every ordering is optimal and inserts exactly candidate_rank edges"""
    if problem.prop.name != PropertyName.ACYCLIC:
        raise ValueError(f"Only defined for the acyclic property, got '{problem.prop}'")
    outputs = projector_outputs(problem)
    expected = candidate_rank(problem.g_t, problem.candidates)
    return outputs == optimal_projections(problem) and all(
        problem.inserted_count(g) == expected for g in outputs
    )


def random_fixture(prop: PropertySpec, n: int, max_candidates: int, rng: np.random.Generator) -> GedProjectionProblem:
    """A random valid g_t and a g_hat adding up to max_candidates random pairs"""
    pairs = list(combinations(range(n), 2))
    density = rng.random()
    checker = make_checker(prop, n)
    for k in rng.permutation(len(pairs)):
        if rng.random() < density:
            checker.try_insert(*pairs[k])
    g_t = LabeledGraph(n, (0,) * n, [(i, j, 1) for i, j in checker.edges])
    free = [p for p in pairs if p not in g_t.edge_set]
    k = int(rng.integers(0, min(max_candidates, len(free)) + 1))
    chosen = [free[idx] for idx in rng.choice(len(free), size=k, replace=False)] if k else []
    return GedProjectionProblem(g_t, g_t.add_edges((i, j, 1) for i, j in chosen), prop)


# ==============================
# Stored fixtures with orderings that insert different edge counts
# ==============================

def _wheel_fixture() -> GedProjectionProblem:
    # rim 0..4, hub 5; the rim chords (1,4) and (0,2), (0,3) cannot share the outer face
    rim = [(k, (k + 1) % 5, 1) for k in range(5)]
    spokes = [(5, k, 1) for k in range(5)]
    g_t = LabeledGraph(6, (0,) * 6, rim + spokes)
    return GedProjectionProblem(g_t, g_t.add_edges([(1, 4, 1), (0, 2, 1), (0, 3, 1)]),
                                PropertySpec(PropertyName.PLANAR))


def _matching_fixture() -> GedProjectionProblem:
    g_t = LabeledGraph.empty(4)
    return GedProjectionProblem(g_t, g_t.add_edges([(0, 1, 1), (1, 2, 1), (2, 3, 1)]),
                                PropertySpec(PropertyName.MAX_DEGREE, 1))


def _spider_fixture() -> GedProjectionProblem:
    # legs of length 3, 2, 2 from node 0; nodes 8 and 9 isolated
    edges = [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (0, 6), (6, 7)]
    g_t = LabeledGraph(10, (0,) * 10, [(i, j, 1) for i, j in edges])
    return GedProjectionProblem(g_t, g_t.add_edges([(5, 8, 1), (7, 9, 1), (6, 8, 1)]),
                                PropertySpec(PropertyName.LOBSTER))


COUNTER_EXAMPLES: Dict[str, GedProjectionProblem] = {
    "planar": _wheel_fixture(),
    "max_degree:1": _matching_fixture(),
    "lobster": _spider_fixture(),
}


@dataclass
class CheckReport:
    theorem: int
    prop: str
    trials: int
    passed: int
    failure: Optional[Dict[str, Any]] = None

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def to_dict(self) -> Dict[str, Any]:
        return {"theorem": self.theorem, "property": self.prop, "trials": self.trials,
                "passed": self.passed, "ok": self.ok, "counter_example": self.failure}


def run_theorem_check(theorem: int, prop: PropertySpec, trials: int, seed: int,
                      max_n: int = 6, max_candidates: int = ORDERING_LIMIT) -> CheckReport:
    """Random fixtures with 2..max_n nodes; stops at the first failure and keeps it"""
    if theorem not in (1, 2):
        raise ValueError(f"Unknown theorem {theorem}")
    if theorem == 2 and prop.name != PropertyName.ACYCLIC:
        raise ValueError("The cardinality check only applies to the acyclic property")
    verify = verify_theorem1 if theorem == 1 else verify_theorem2
    rng = np.random.default_rng(seed)
    report = CheckReport(theorem, str(prop), trials, 0)
    for trial in range(trials):
        problem = random_fixture(prop, int(rng.integers(2, max_n + 1)), max_candidates, rng)
        if not verify(problem):
            report.failure = {"trial": trial, "g_t": problem.g_t.to_dict(), "g_hat": problem.g_hat.to_dict()}
            logger.error("Theorem %d failed for '%s' at trial %d", theorem, prop, trial)
            break
        report.passed += 1
    return report
