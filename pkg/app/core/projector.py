"""
Projector: inserts the candidate edges of a proposed graph one at a time and
drops every insertion that would break the property.
"""
import copy
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

import numpy as np

from app.core.constraints import BlockingTable, CheckerFactory, ConstraintChecker
from app.core.graph import EdgeTriple, LabeledGraph, Pair, edges_within

logger = logging.getLogger(__name__)


class EnumerationLimitError(ValueError):
    """Brute-force enumeration asked for more candidates than allowed"""


class ProjectorPolicy(Enum):
    UNIFORM = "uniform"
    DETERMINISTIC = "det"
    STOCHASTIC = "stoch"
    OFF = "off"


@dataclass
class ProjectionStats:
    """Accounting across all projector calls of one trajectory"""
    queries: int = 0
    inserted: int = 0
    rejected: int = 0
    skipped_blocked: int = 0
    proposed_pairs: Set[Pair] = field(default_factory=set)
    pair_queries: Counter = field(default_factory=Counter)

    @property
    def proposed(self) -> int:
        return len(self.proposed_pairs)

    @property
    def max_queries_per_pair(self) -> int:
        return max(self.pair_queries.values(), default=0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "proposed": self.proposed,
            "queries": self.queries,
            "inserted": self.inserted,
            "rejected": self.rejected,
            "skipped_blocked": self.skipped_blocked,
            "max_queries_per_pair": self.max_queries_per_pair,
        }


def candidate_edges(g_t: LabeledGraph, g_hat: LabeledGraph) -> List[EdgeTriple]:
    """Edges of g_hat absent from g_t, carrying g_hat's label"""
    present = g_t.edge_set
    return [(i, j, label) for i, j, label in g_hat.edges if (i, j) not in present]


def order_candidates(candidates: List[EdgeTriple], policy: ProjectorPolicy, rng: np.random.Generator,
                     edge_probs: Optional[Mapping[Pair, float]] = None) -> List[EdgeTriple]:
    if not candidates:
        return []
    if policy == ProjectorPolicy.UNIFORM:
        return [candidates[k] for k in rng.permutation(len(candidates))]
    weights = np.array([
        1.0 if edge_probs is None else float(edge_probs.get((i, j), 0.0)) for i, j, _ in candidates
    ])
    if policy == ProjectorPolicy.DETERMINISTIC:
        order = sorted(range(len(candidates)), key=lambda k: (-weights[k], candidates[k][0], candidates[k][1]))
        return [candidates[k] for k in order]
    if policy == ProjectorPolicy.STOCHASTIC:
        # u^(1/w) keys: sorting by them samples without replacement proportionally to w
        u = rng.random(len(candidates))
        with np.errstate(divide="ignore"):
            keys = np.where(weights > 0, u ** (1.0 / np.where(weights > 0, weights, 1.0)), -1.0)
        order = sorted(range(len(candidates)), key=lambda k: (-keys[k], candidates[k][0], candidates[k][1]))
        return [candidates[k] for k in order]
    raise ValueError(f"Projector policy {policy.value} does not order candidates")


def project(g_t: LabeledGraph, g_hat: LabeledGraph, policy: ProjectorPolicy, checker: ConstraintChecker,
            blocking: Optional[BlockingTable], rng: np.random.Generator,
            edge_probs: Optional[Mapping[Pair, float]] = None,
            stats: Optional[ProjectionStats] = None) -> LabeledGraph:
    """
    G^{t-1}: g_hat's node labels, g_t's edges plus every candidate that keeps
    the property when tried in the policy's order. Rejected candidates are
    blocked for the rest of the trajectory. `checker` must hold g_t's edges and
    is left holding the result's.
    """
    if g_t.n != g_hat.n:
        raise ValueError(f"Node count mismatch: {g_t.n} vs {g_hat.n}")
    if not edges_within(g_t, g_hat):
        raise ValueError("Proposed graph drops or relabels an existing edge")
    if checker.n != g_t.n or checker.current_edge_count != g_t.num_edges:
        raise ValueError(
            f"Checker holds {checker.current_edge_count} edges on {checker.n} nodes, "
            f"graph has {g_t.num_edges} on {g_t.n}"
        )
    stats = stats if stats is not None else ProjectionStats()
    inserted: List[EdgeTriple] = []
    for i, j, label in order_candidates(candidate_edges(g_t, g_hat), policy, rng, edge_probs):
        stats.proposed_pairs.add((i, j))
        if blocking is not None and (i, j) in blocking:
            stats.skipped_blocked += 1
            continue
        stats.queries += 1
        stats.pair_queries[(i, j)] += 1
        if checker.try_insert(i, j):
            inserted.append((i, j, label))
            stats.inserted += 1
        else:
            stats.rejected += 1
            if blocking is not None:
                blocking.block(i, j)
    return LabeledGraph(g_hat.n, g_hat.node_labels, list(g_t.edges) + inserted)


def enumerate_projector_outputs(g_t: LabeledGraph, g_hat: LabeledGraph, checker_factory: CheckerFactory,
                                max_candidates: int = 10) -> Set[LabeledGraph]:
    """Every graph the projector can return, over all candidate orderings"""
    candidates = candidate_edges(g_t, g_hat)
    if len(candidates) > max_candidates:
        raise EnumerationLimitError(f"{len(candidates)} candidates exceed the limit of {max_candidates}")
    labels = {(i, j): label for i, j, label in candidates}
    base_edges = list(g_t.edges)
    accepts: Dict[Tuple[FrozenSet[Pair], Pair], bool] = {}
    # checker states keyed by the inserted set; each is derived from its parent's
    states: Dict[FrozenSet[Pair], ConstraintChecker] = {frozenset(): checker_factory(g_t.n).load(g_t)}

    def valid(current: FrozenSet[Pair], pair: Pair) -> bool:
        key = (current, pair)
        if key not in accepts:
            child = copy.deepcopy(states[current])
            accepts[key] = child.try_insert(*pair)
            if accepts[key]:
                states.setdefault(current | {pair}, child)
        return accepts[key]

    outputs: Set[FrozenSet[Pair]] = set()
    seen: Set[Tuple[FrozenSet[Pair], FrozenSet[Pair]]] = set()

    def explore(current: FrozenSet[Pair], remaining: FrozenSet[Pair]) -> None:
        if (current, remaining) in seen:
            return
        seen.add((current, remaining))
        if not remaining:
            outputs.add(current)
            return
        for pair in remaining:
            rest = remaining - {pair}
            explore(current | {pair} if valid(current, pair) else current, rest)

    explore(frozenset(), frozenset(labels))
    return {
        LabeledGraph(g_hat.n, g_hat.node_labels, base_edges + [(i, j, labels[(i, j)]) for i, j in inserted])
        for inserted in outputs
    }
