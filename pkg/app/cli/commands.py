"""
Subcommand handlers. Each takes a validated RunConfig, writes its artifacts
and returns a JSON-serializable summary for stdout.
"""
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from app.config.run_config import RunConfig
from app.config.settings import REPORT_SCHEMA
from app.core.constraints import BlockingTable, PropertySpec, make_checker, validate_dataset
from app.core.datasets import DatasetFamily, DatasetSpec, save_splits
from app.core.denoiser import Checkpoint, FeaturizedDenoiser, TrainConfig, node_count_distribution, train_denoiser
from app.core.graph import LabeledGraph, SchemaMismatchError, read_dataset, write_graphs
from app.core.metrics import VALIDITY_PROPERTY, Validity, evaluate
from app.core.noise import build_schedule, estimate_node_marginals
from app.core.oracle import run_theorem_check
from app.core.projector import ProjectionStats, ProjectorPolicy, project
from app.core.sampler import SampleMode, SampleRun, sample

logger = logging.getLogger(__name__)

FAMILY_PROPERTY = {
    DatasetFamily.PLANAR: "planar",
    DatasetFamily.TREE: "acyclic",
    DatasetFamily.LOBSTER: "lobster",
    DatasetFamily.CELLGRAPH: "planar",
}

REQUIRED_FLAGS: Dict[str, Tuple[str, ...]] = {
    "generate-dataset": ("family", "out"),
    "train": ("data", "out"),
    "sample": ("model", "out"),
    "evaluate": ("generated", "train", "test", "validity"),
    "project": ("input", "out"),
    "check": (),
}


class CheckFailedError(RuntimeError):
    pass


# -----------------------------
# generate-dataset
# -----------------------------
def generate_dataset(config: RunConfig) -> Dict[str, Any]:
    config.require(*REQUIRED_FLAGS[config.command])
    family = DatasetFamily(config.family)
    spec_kwargs = {"family": family, "n": config.n, "seed": config.seed}
    if config.counts is not None:
        spec_kwargs["counts"] = config.counts
    spec = DatasetSpec(**spec_kwargs)
    splits = spec.generate()
    validate_dataset(splits.train, PropertySpec.parse(FAMILY_PROPERTY[family]))
    paths = save_splits(splits, config.out, spec.label_spaces, config.to_header())
    return {name: {"path": str(path), "count": len(graphs)}
            for (name, path), graphs in zip(paths.items(), splits.as_dict().values())}


# -----------------------------
# train
# -----------------------------
def train(config: RunConfig) -> Dict[str, Any]:
    config.require(*REQUIRED_FLAGS[config.command])
    dataset = read_dataset(config.data)
    if not dataset.graphs:
        raise ValueError(f"No graphs in {config.data}")
    spaces = dataset.label_spaces
    if config.prop != "none":
        validate_dataset(dataset.graphs, PropertySpec.parse(config.prop))
    schedule = build_schedule(config.T, estimate_node_marginals(dataset.graphs, spaces.b), spaces.edge_states)
    train_config = TrainConfig(lam=config.lam, lr=config.lr, momentum=config.momentum, steps=config.steps,
                               batch_size=config.batch_size, seed=config.seed)
    state = train_denoiser(dataset.graphs, schedule, train_config, spaces)
    checkpoint = Checkpoint(
        denoiser=FeaturizedDenoiser(state, spaces, schedule.T),
        schedule=schedule,
        node_counts=node_count_distribution(dataset.graphs),
        config=config.to_header(),
    )
    checkpoint.save_to_file(config.out)
    tail = state.loss_trace[-10:]
    return {"model": config.out, "steps": state.step, "final_loss": float(np.mean(tail)) if tail else None}


# -----------------------------
# sample
# -----------------------------
def sample_graphs(config: RunConfig) -> Dict[str, Any]:
    config.require(*REQUIRED_FLAGS[config.command])
    checkpoint = Checkpoint.load_from_file(config.model)
    run = SampleRun(
        count=config.count,
        mode=SampleMode(config.mode),
        denoiser=checkpoint.denoiser,
        schedule=checkpoint.schedule,
        node_counts=checkpoint.node_counts,
        prop=PropertySpec.parse(config.prop),
        policy=ProjectorPolicy(config.projector),
        seed=config.seed,
        efficient=config.efficient,
        max_attempts=config.max_attempts,
        jobs=config.jobs,
    )
    result = sample(run)
    write_graphs(result.graphs, config.out, checkpoint.label_spaces, config.to_header())
    return result.summary.to_dict()


# -----------------------------
# evaluate
# -----------------------------
def evaluate_samples(config: RunConfig) -> Dict[str, Any]:
    config.require(*REQUIRED_FLAGS[config.command])
    datasets = {name: read_dataset(getattr(config, name)) for name in ("generated", "train", "test")}
    spaces = {name: d.label_spaces for name, d in datasets.items()}
    if len(set(spaces.values())) != 1:
        raise SchemaMismatchError(
            "Label spaces differ between files: "
            + ", ".join(f"{name} b={s.b} c={s.c}" for name, s in spaces.items())
        )
    validity = Validity(config.validity)
    prop = PropertySpec.parse(config.prop) if config.prop != "none" else VALIDITY_PROPERTY[validity]
    report = evaluate(datasets["generated"].graphs, datasets["train"].graphs, datasets["test"].graphs,
                      validity, prop, config.jobs)
    summary = {"schema": REPORT_SCHEMA, "config": config.to_header(), "report": report.to_dict()}
    if config.out:
        Path(config.out).parent.mkdir(parents=True, exist_ok=True)
        with open(config.out, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return summary


# -----------------------------
# project
# -----------------------------
def project_graphs(config: RunConfig) -> Dict[str, Any]:
    """Project every graph of a file onto the property, starting from its bare node set"""
    config.require(*REQUIRED_FLAGS[config.command])
    dataset = read_dataset(config.input)
    prop = PropertySpec.parse(config.prop)
    policy = ProjectorPolicy(config.projector)
    if policy == ProjectorPolicy.OFF:
        raise ValueError("project needs a projector policy other than 'off'")
    totals: Counter = Counter()
    projected: List[LabeledGraph] = []
    for index, g in enumerate(dataset.graphs):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(index,)))
        stats = ProjectionStats()
        projected.append(project(LabeledGraph.empty(g.n, g.node_labels), g, policy,
                                 make_checker(prop, g.n, config.efficient),
                                 BlockingTable() if config.efficient else None, rng, None, stats))
        totals.update({k: v for k, v in stats.to_dict().items() if k != "max_queries_per_pair"})
    write_graphs(projected, config.out, dataset.label_spaces, config.to_header())
    return {"count": len(projected), **totals}


# -----------------------------
# check
# -----------------------------
def check_theorem(config: RunConfig) -> Dict[str, Any]:
    prop = PropertySpec.parse(config.prop if config.theorem == 1 else "acyclic")
    report = run_theorem_check(config.theorem, prop, config.trials, config.seed,
                               max_n=6 if config.theorem == 1 else 7)
    if not report.ok:
        raise CheckFailedError(json.dumps(report.to_dict()))
    return report.to_dict()


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "generate-dataset": generate_dataset,
    "train": train,
    "sample": sample_graphs,
    "evaluate": evaluate_samples,
    "project": project_graphs,
    "check": check_theorem,
}


def dispatch(config: RunConfig) -> Dict[str, Any]:
    logger.info("Running %s (seed %d)", config.command, config.seed)
    return COMMANDS[config.command](config)
