"""
Reverse-process sampling: constrained generation with the projector, the
unconstrained pipeline, rejection filtering and project-at-end.

Every graph index owns its own seed stream (split from the run seed by
index), so outputs do not depend on worker count or scheduling order.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.constraints import BlockingTable, PropertyName, PropertySpec, full_check, make_checker
from app.core.denoiser import Denoiser
from app.core.graph import LabeledGraph, pair_indices
from app.core.noise import NoiseSchedule, reverse_step_dist, sample_categorical, sample_from_distributions
from app.core.projector import ProjectionStats, ProjectorPolicy, project

logger = logging.getLogger(__name__)

Observer = Callable[[int, LabeledGraph], None]


class SampleMode(Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"
    REJECTION = "rejection"
    PROJECT_AT_END = "project_end"


@dataclass
class SampleRun:
    count: int
    mode: SampleMode
    denoiser: Denoiser
    schedule: NoiseSchedule
    node_counts: Dict[int, float]
    prop: PropertySpec = field(default_factory=lambda: PropertySpec(PropertyName.NONE))
    policy: ProjectorPolicy = ProjectorPolicy.UNIFORM
    seed: int = 0
    efficient: bool = True
    max_attempts: Optional[int] = None
    jobs: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if not self.node_counts:
            raise ValueError("Node-count distribution is empty")
        if self.mode in (SampleMode.CONSTRAINED, SampleMode.PROJECT_AT_END) and self.policy == ProjectorPolicy.OFF:
            raise ValueError(f"Mode '{self.mode.value}' needs a projector policy other than 'off'")
        if self.mode == SampleMode.REJECTION and self.prop.name == PropertyName.NONE:
            raise ValueError("Rejection sampling needs a property to filter on")
        if self.mode == SampleMode.UNCONSTRAINED:
            self.policy = ProjectorPolicy.OFF
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")

    @property
    def attempt_limit(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 10 * self.count


@dataclass
class TrajectoryStats:
    n: int
    projection: ProjectionStats
    blocked: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = {"n": self.n, "blocked": self.blocked, "wall_time": self.wall_time}
        data.update(self.projection.to_dict())
        return data


@dataclass
class RunSummary:
    mode: str
    policy: str
    prop: str
    requested: int
    generated: int = 0
    attempts: int = 0
    proposed: int = 0
    queries: int = 0
    inserted: int = 0
    rejected: int = 0
    blocked: int = 0
    max_queries_per_pair: int = 0
    wall_time: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.generated / self.attempts if self.attempts else 0.0

    def add(self, stats: TrajectoryStats) -> None:
        self.proposed += stats.projection.proposed
        self.queries += stats.projection.queries
        self.inserted += stats.projection.inserted
        self.rejected += stats.projection.rejected
        self.blocked += stats.blocked
        self.max_queries_per_pair = max(self.max_queries_per_pair, stats.projection.max_queries_per_pair)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "policy": self.policy,
            "property": self.prop,
            "requested": self.requested,
            "generated": self.generated,
            "attempts": self.attempts,
            "acceptance_rate": self.acceptance_rate,
            "proposed": self.proposed,
            "queries": self.queries,
            "inserted": self.inserted,
            "rejected": self.rejected,
            "blocked": self.blocked,
            "max_queries_per_pair": self.max_queries_per_pair,
            "wall_time": self.wall_time,
        }


@dataclass
class SampleResult:
    graphs: List[LabeledGraph]
    trajectories: List[TrajectoryStats]
    summary: RunSummary


# ==============================
# Single trajectory
# ==============================

def index_streams(seed: int, index: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Sampling and projector-ordering generators of one graph index"""
    return (np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 0))),
            np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 1))))


def sample_node_count(node_counts: Dict[int, float], rng: np.random.Generator) -> int:
    sizes = np.array(list(node_counts), dtype=np.int64)
    probs = np.array(list(node_counts.values()), dtype=np.float64)
    return int(sizes[rng.choice(len(sizes), p=probs / probs.sum())])


def _chosen_edge_probs(g_hat: LabeledGraph, chosen: np.ndarray) -> Dict[Tuple[int, int], float]:
    rows, cols = pair_indices(g_hat.n)
    present = np.flatnonzero(g_hat.pair_labels() > 0)
    return {(int(rows[k]), int(cols[k])): float(chosen[k]) for k in present}


def sample_trajectory(run: SampleRun, n: int, rng: np.random.Generator, proj_rng: np.random.Generator,
                      constrained: bool, observer: Optional[Observer] = None) -> Tuple[LabeledGraph, TrajectoryStats]:
    """Run t = T..1 from the limit distribution on n nodes"""
    started = time.perf_counter()
    schedule = run.schedule
    labels = sample_categorical(np.tile(schedule.node_marginals, (n, 1)), rng) if n else np.zeros(0, dtype=np.int64)
    g = LabeledGraph(n, labels.tolist(), ())
    stats = ProjectionStats()
    checker = make_checker(run.prop, n, run.efficient) if constrained else None
    blocking = BlockingTable() if constrained and run.efficient else None
    if observer is not None:
        observer(schedule.T, g)

    for t in range(schedule.T, 0, -1):
        predictions = run.denoiser.predict(g, t)
        g_hat, chosen = sample_from_distributions(reverse_step_dist(g, predictions, t, schedule), rng)
        if constrained:
            edge_probs = _chosen_edge_probs(g_hat, chosen) if run.policy != ProjectorPolicy.UNIFORM else None
            g = project(g, g_hat, run.policy, checker, blocking, proj_rng, edge_probs, stats)
        else:
            g = g_hat
        if observer is not None:
            observer(t - 1, g)

    return g, TrajectoryStats(
        n=n, projection=stats, blocked=len(blocking) if blocking is not None else 0,
        wall_time=time.perf_counter() - started,
    )


def project_at_end(g_hat: LabeledGraph, run: SampleRun, proj_rng: np.random.Generator) -> Tuple[LabeledGraph, ProjectionStats]:
    """Project a finished sample starting from its node labels alone"""
    stats = ProjectionStats()
    start = LabeledGraph.empty(g_hat.n, g_hat.node_labels)
    checker = make_checker(run.prop, g_hat.n, run.efficient)
    blocking = BlockingTable() if run.efficient else None
    return project(start, g_hat, run.policy, checker, blocking, proj_rng, None, stats), stats


def _generate_index(run: SampleRun, index: int, observer: Optional[Observer] = None) -> Tuple[LabeledGraph, TrajectoryStats]:
    rng, proj_rng = index_streams(run.seed, index)
    n = sample_node_count(run.node_counts, rng)
    constrained = run.mode == SampleMode.CONSTRAINED
    g, stats = sample_trajectory(run, n, rng, proj_rng, constrained, observer)
    if run.mode == SampleMode.PROJECT_AT_END:
        g, stats.projection = project_at_end(g, run, proj_rng)
    return g, stats


# ==============================
# Parallel execution
# ==============================

_WORKER_RUN: Optional[SampleRun] = None


def _init_worker(run: SampleRun) -> None:
    global _WORKER_RUN
    _WORKER_RUN = run


def _worker(index: int) -> Tuple[LabeledGraph, TrajectoryStats]:
    return _generate_index(_WORKER_RUN, index)


def _generate(run: SampleRun, indices: List[int],
              observer: Optional[Observer] = None) -> List[Tuple[LabeledGraph, TrajectoryStats]]:
    if run.jobs == 1 or len(indices) <= 1 or observer is not None:
        return [_generate_index(run, k, observer) for k in indices]
    with ProcessPoolExecutor(max_workers=min(run.jobs, len(indices)),
                             initializer=_init_worker, initargs=(run,)) as executor:
        return list(executor.map(_worker, indices))


def _check_accounting(stats: TrajectoryStats) -> None:
    """At most one property query per proposed pair along a trajectory"""
    projection = stats.projection
    if projection.max_queries_per_pair > 1 or projection.queries > projection.proposed:
        raise RuntimeError(
            f"Checker accounting violated: {projection.queries} queries for {projection.proposed} proposed "
            f"pairs, max {projection.max_queries_per_pair} per pair"
        )


# ==============================
# Public entry points
# ==============================

def sample(run: SampleRun, observer: Optional[Observer] = None) -> SampleResult:
    """Dispatch on run.mode; the observer sees every intermediate graph and forces serial execution"""
    if run.mode == SampleMode.REJECTION:
        return sample_rejection(run)
    started = time.perf_counter()
    results = _generate(run, list(range(run.count)), observer)
    summary = RunSummary(run.mode.value, run.policy.value, str(run.prop), run.count,
                         generated=len(results), attempts=len(results))
    for _, stats in results:
        if run.mode == SampleMode.CONSTRAINED and run.efficient:
            _check_accounting(stats)
        summary.add(stats)
    summary.wall_time = time.perf_counter() - started
    logger.info("Sampled %d graphs (%s, projector %s) in %.2fs; %d queries for %d proposed pairs",
                summary.generated, summary.mode, summary.policy, summary.wall_time,
                summary.queries, summary.proposed)
    return SampleResult([g for g, _ in results], [s for _, s in results], summary)


def sample_rejection(run: SampleRun) -> SampleResult:
    """Unconstrained samples filtered by the full property check until count or the attempt limit"""
    started = time.perf_counter()
    kept: List[LabeledGraph] = []
    trajectories: List[TrajectoryStats] = []
    summary = RunSummary(SampleMode.REJECTION.value, ProjectorPolicy.OFF.value, str(run.prop), run.count)
    unconstrained = SampleRun(
        count=run.count, mode=SampleMode.UNCONSTRAINED, denoiser=run.denoiser, schedule=run.schedule,
        node_counts=run.node_counts, prop=run.prop, seed=run.seed, efficient=run.efficient, jobs=run.jobs,
    )
    next_index = 0
    while len(kept) < run.count and next_index < run.attempt_limit:
        batch = list(range(next_index, min(next_index + run.count - len(kept), run.attempt_limit)))
        next_index = batch[-1] + 1
        for g, stats in _generate(unconstrained, batch):
            summary.attempts += 1
            summary.add(stats)
            if full_check(run.prop, g):
                kept.append(g)
                trajectories.append(stats)
    summary.generated = len(kept)
    summary.wall_time = time.perf_counter() - started
    if len(kept) < run.count:
        logger.warning("Rejection sampling exhausted %d attempts with %d/%d graphs accepted",
                       summary.attempts, len(kept), run.count)
    logger.info("Rejection sampling acceptance rate %.3f over %d attempts", summary.acceptance_rate, summary.attempts)
    return SampleResult(kept, trajectories, summary)


def sample_project_at_end(run: SampleRun) -> SampleResult:
    if run.mode != SampleMode.PROJECT_AT_END:
        raise ValueError(f"Expected mode '{SampleMode.PROJECT_AT_END.value}', got '{run.mode.value}'")
    return sample(run)
