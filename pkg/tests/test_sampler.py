import logging

import numpy as np
import pytest

from app.core.constraints import PropertySpec, full_check
from app.core.datasets import gen_lobster, gen_tree
from app.core.denoiser import (FeatureSchema, FeaturizedDenoiser, OracleDenoiser, TrainConfig, TrainState,
                              node_count_distribution, train_denoiser)
from app.core.graph import LabelSpaces, edges_within
from app.core.metrics import Validity, validity_predicate, vun
from app.core.noise import build_schedule
from app.core.projector import ProjectorPolicy
from app.core.sampler import SampleMode, SampleRun, sample, sample_project_at_end, sample_rejection
from tests.conftest import graph_from_pairs

SPACES = LabelSpaces(1, 1)
T = 20


def _uniform_denoiser():
    return FeaturizedDenoiser(TrainState.zeros(FeatureSchema(1, 1)), SPACES, T)


def _run(mode, prop="none", denoiser=None, node_counts=None, **kwargs):
    return SampleRun(
        count=kwargs.pop("count", 4),
        mode=mode,
        denoiser=denoiser or _uniform_denoiser(),
        schedule=build_schedule(T, np.array([1.0])),
        node_counts=node_counts or {8: 0.5, 10: 0.5},
        prop=PropertySpec.parse(prop),
        **kwargs,
    )


def _stats_without_time(result):
    return [{k: v for k, v in s.to_dict().items() if k != "wall_time"} for s in result.trajectories]


def test_run_validation():
    with pytest.raises(ValueError):
        _run(SampleMode.CONSTRAINED, "planar", policy=ProjectorPolicy.OFF)
    with pytest.raises(ValueError):
        _run(SampleMode.PROJECT_AT_END, "planar", policy=ProjectorPolicy.OFF)
    with pytest.raises(ValueError):
        _run(SampleMode.CONSTRAINED, count=0)
    assert _run(SampleMode.UNCONSTRAINED).policy == ProjectorPolicy.OFF
    assert _run(SampleMode.REJECTION, count=5).attempt_limit == 50


@pytest.mark.parametrize("text", ["planar", "acyclic", "lobster", "max_degree:4", "triangle_free"])
def test_constrained_trajectories_stay_valid(text):
    spec = PropertySpec.parse(text)
    seen = []

    def observer(t, g):
        assert full_check(spec, g), (t, g.edges)
        if t < T:
            assert edges_within(seen[-1], g)
        seen.append(g)

    result = sample(_run(SampleMode.CONSTRAINED, text, seed=5), observer=observer)
    assert len(result.graphs) == 4
    assert all(full_check(spec, g) for g in result.graphs)
    assert len(seen) == 4 * (T + 1)


@pytest.mark.parametrize("policy", [ProjectorPolicy.UNIFORM, ProjectorPolicy.DETERMINISTIC, ProjectorPolicy.STOCHASTIC])
def test_checker_accounting(policy):
    result = sample(_run(SampleMode.CONSTRAINED, "planar", policy=policy, seed=2))
    assert result.summary.max_queries_per_pair <= 1
    for g, stats in zip(result.graphs, result.trajectories):
        assert stats.projection.queries <= stats.projection.proposed <= g.n * (g.n - 1) // 2
    assert result.summary.generated == 4


def test_unconstrained_samples_usually_violate_property():
    result = sample(_run(SampleMode.UNCONSTRAINED, "acyclic", seed=1, count=6))
    assert result.summary.proposed == 0
    assert not all(full_check(PropertySpec.parse("acyclic"), g) for g in result.graphs)


def test_oracle_reproduces_clean_graph():
    clean = graph_from_pairs(6, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)])
    oracle = OracleDenoiser(clean, SPACES)
    result = sample(_run(SampleMode.UNCONSTRAINED, denoiser=oracle, node_counts={6: 1.0}, count=3))
    assert all(g == clean for g in result.graphs)


def test_constrained_equals_unconstrained_without_rejections():
    clean = graph_from_pairs(7, [(0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (2, 6)])
    oracle = OracleDenoiser(clean, SPACES)
    kwargs = dict(denoiser=oracle, node_counts={7: 1.0}, count=3, seed=9)
    free = sample(_run(SampleMode.UNCONSTRAINED, "lobster", **kwargs))
    bound = sample(_run(SampleMode.CONSTRAINED, "lobster", **kwargs))
    assert free.graphs == bound.graphs
    assert bound.summary.rejected == 0


def test_same_seed_same_output():
    first = sample(_run(SampleMode.CONSTRAINED, "planar", seed=4))
    second = sample(_run(SampleMode.CONSTRAINED, "planar", seed=4))
    assert first.graphs == second.graphs
    assert _stats_without_time(first) == _stats_without_time(second)


def test_worker_count_does_not_change_output():
    serial = sample(_run(SampleMode.CONSTRAINED, "acyclic", seed=6, jobs=1))
    parallel = sample(_run(SampleMode.CONSTRAINED, "acyclic", seed=6, jobs=2))
    assert serial.graphs == parallel.graphs
    assert _stats_without_time(serial) == _stats_without_time(parallel)


def test_reference_checker_gives_valid_graphs():
    result = sample(_run(SampleMode.CONSTRAINED, "planar", seed=3, efficient=False, count=2))
    assert all(full_check(PropertySpec.parse("planar"), g) for g in result.graphs)
    assert all(s.blocked == 0 for s in result.trajectories)


def test_rejection_needs_a_property():
    with pytest.raises(ValueError, match="property"):
        _run(SampleMode.REJECTION, "none")


def test_rejection_accepts_everything_under_a_loose_bound():
    result = sample(_run(SampleMode.REJECTION, "max_degree:20", count=3))
    assert len(result.graphs) == 3
    assert result.summary.acceptance_rate == 1.0


def test_rejection_gives_up_after_attempt_limit(caplog, k5):
    oracle = OracleDenoiser(k5, SPACES)
    run = _run(SampleMode.REJECTION, "planar", denoiser=oracle, node_counts={5: 1.0}, count=2, max_attempts=3)
    with caplog.at_level(logging.WARNING, logger="app.core.sampler"):
        result = sample_rejection(run)
    assert result.graphs == []
    assert result.summary.attempts == 3
    assert result.summary.acceptance_rate == 0.0
    assert "exhausted" in caplog.text


def test_project_at_end_prunes_final_sample(c4):
    oracle = OracleDenoiser(c4, SPACES)
    result = sample_project_at_end(_run(SampleMode.PROJECT_AT_END, "acyclic", denoiser=oracle, node_counts={4: 1.0}))
    for g in result.graphs:
        assert g.num_edges == 3
        assert g.edge_set <= c4.edge_set


def test_project_at_end_keeps_valid_sample(path4):
    oracle = OracleDenoiser(path4, SPACES)
    result = sample(_run(SampleMode.PROJECT_AT_END, "acyclic", denoiser=oracle, node_counts={4: 1.0}, count=2))
    assert all(g == path4 for g in result.graphs)


def test_project_at_end_entry_point_checks_mode():
    with pytest.raises(ValueError):
        sample_project_at_end(_run(SampleMode.CONSTRAINED, "planar"))


def test_rejection_acceptance_matches_unconstrained_property_rate():
    spec = PropertySpec.parse("acyclic")
    free = sample(_run(SampleMode.UNCONSTRAINED, "acyclic", node_counts={4: 1.0}, count=300, seed=11))
    free_rate = np.mean([full_check(spec, g) for g in free.graphs])
    kept = sample(_run(SampleMode.REJECTION, "acyclic", node_counts={4: 1.0}, count=150, seed=12))
    attempts = kept.summary.attempts
    assert len(kept.graphs) == 150
    pooled = (free_rate * 300 + kept.summary.generated) / (300 + attempts)
    sigma = np.sqrt(pooled * (1 - pooled) * (1 / 300 + 1 / attempts))
    assert 0.0 < pooled < 1.0
    assert abs(free_rate - kept.summary.acceptance_rate) <= 3 * sigma


def _lobster_model(steps):
    rng = np.random.default_rng(4)
    train = gen_lobster(12, rng, backbone=(3, 6), node_range=(5, 20))
    schedule = build_schedule(T, np.array([1.0]))
    state = train_denoiser(train, schedule, TrainConfig(steps=steps, batch_size=4, log_every=0, seed=4), SPACES)
    return train, FeaturizedDenoiser(state, SPACES, T), node_count_distribution(train)


def test_constrained_lobster_vun_not_below_unconstrained():
    train, denoiser, node_counts = _lobster_model(steps=60)
    valid = validity_predicate(Validity.LOBSTER)
    kwargs = dict(denoiser=denoiser, node_counts=node_counts, count=12, seed=8)
    free = sample(_run(SampleMode.UNCONSTRAINED, "lobster", **kwargs))
    bound = sample(_run(SampleMode.CONSTRAINED, "lobster", **kwargs))
    free_vun, bound_vun = vun(free.graphs, train, valid), vun(bound.graphs, train, valid)
    assert bound_vun.valid >= free_vun.valid
    assert bound_vun.vun >= free_vun.vun
    assert all(full_check(PropertySpec.parse("lobster"), g) for g in bound.graphs)


@pytest.mark.slow
def test_projector_overhead_on_trees():
    rng = np.random.default_rng(2)
    train = gen_tree(16, 64, rng)
    schedule = build_schedule(100, np.array([1.0]))
    state = train_denoiser(train, schedule, TrainConfig(steps=200, batch_size=4, log_every=0, seed=2), SPACES)
    denoiser = FeaturizedDenoiser(state, SPACES, 100)

    def timed(mode):
        run = SampleRun(count=20, mode=mode, denoiser=denoiser, schedule=schedule, node_counts={64: 1.0},
                        prop=PropertySpec.parse("acyclic"), seed=5)
        return min(sample(run).summary.wall_time for _ in range(2))

    free, bound = timed(SampleMode.UNCONSTRAINED), timed(SampleMode.CONSTRAINED)
    logging.getLogger(__name__).info("Projector overhead on trees: %.2fx (%.2fs vs %.2fs)", bound / free, bound, free)
    assert bound / free <= 2.0
