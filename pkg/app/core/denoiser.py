"""
Denoisers: the interface the reverse process consumes, a featurized
linear-softmax model trained with hand-derived cross-entropy gradients, an
oracle that knows the clean graph, and the count-based cell-graph baseline.
"""
import json
import logging
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.special import log_softmax, softmax

from app.config.settings import (
    BASELINE_SMOOTHING,
    BATCH_SIZE,
    CHECKPOINT_SCHEMA,
    EDGE_LOSS_WEIGHT,
    FEATURE_MAX_HOPS,
    FEATURE_SCHEMA,
    LEARNING_RATE,
    LOG_EVERY,
    MOMENTUM,
    TRAIN_STEPS,
)
from app.core.graph import GraphDistributions, LabeledGraph, LabelSpaces, SchemaMismatchError, pair_indices
from app.core.noise import NoiseSchedule, apply_forward, sample_categorical

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"Training loss became non-finite at step {step}")


class Denoiser(ABC):
    """Maps (G^t, t) to distributions over clean node and edge types"""

    label_spaces: LabelSpaces

    @abstractmethod
    def predict(self, g_t: LabeledGraph, t: int) -> GraphDistributions:
        ...


def node_count_distribution(graphs: Iterable[LabeledGraph]) -> Dict[int, float]:
    counts = Counter(g.n for g in graphs)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("Empty training set")
    return {n: k / total for n, k in sorted(counts.items())}


# ==============================
# Oracle
# ==============================

class OracleDenoiser(Denoiser):
    """Puts all mass on a known clean graph's labels"""

    def __init__(self, clean: LabeledGraph, label_spaces: LabelSpaces):
        label_spaces.check_graph(clean)
        self.clean = clean
        self.label_spaces = label_spaces

    def predict(self, g_t: LabeledGraph, t: int) -> GraphDistributions:
        if g_t.n != self.clean.n:
            raise ValueError(f"Oracle knows a graph on {self.clean.n} nodes, got {g_t.n}")
        node_dist = np.eye(self.label_spaces.b)[list(self.clean.node_labels)]
        edge_dist = np.eye(self.label_spaces.edge_states)[self.clean.pair_labels()]
        return GraphDistributions(node_dist=node_dist.reshape(g_t.n, self.label_spaces.b),
                                  edge_dist=edge_dist.reshape(-1, self.label_spaces.edge_states))


# ==============================
# Features
# ==============================

DISTANCE_BUCKETS = FEATURE_MAX_HOPS + 1


@dataclass(frozen=True)
class FeatureSchema:
    b: int
    c: int

    @property
    def node_dim(self) -> int:
        # label one-hot, t/T, degree, 3 degree summaries, node type and edge type frequencies, bias
        return self.b + 1 + 1 + 3 + self.b + (self.c + 1) + 1

    @property
    def pair_dim(self) -> int:
        # edge one-hot, Adamic-Adar, distance buckets, sorted degrees, t/T, endpoint labels,
        # edge type frequencies, bias
        return (self.c + 1) + 1 + DISTANCE_BUCKETS + 2 + 1 + self.b + (self.c + 1) + 1

    @property
    def schema_id(self) -> str:
        return f"{FEATURE_SCHEMA}:b={self.b}:c={self.c}"


def distance_buckets(adjacency: np.ndarray) -> np.ndarray:
    """Hop distance per node pair: 0..9 for 1..10 hops, 10 beyond the radius or unreachable"""
    n = adjacency.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    dist = dijkstra(csr_matrix(adjacency), directed=False, unweighted=True, limit=FEATURE_MAX_HOPS)
    buckets = np.full((n, n), DISTANCE_BUCKETS - 1, dtype=np.int64)
    reach = np.isfinite(dist) & (dist >= 1) & (dist <= FEATURE_MAX_HOPS)
    buckets[reach] = dist[reach].astype(np.int64) - 1
    return buckets


def adamic_adar(adjacency: np.ndarray) -> np.ndarray:
    deg = adjacency.sum(axis=1)
    weights = np.zeros_like(deg, dtype=np.float64)
    hubs = deg >= 2
    weights[hubs] = 1.0 / np.log(deg[hubs])
    return (adjacency * weights[None, :]) @ adjacency.T


def compute_features(g_t: LabeledGraph, t: int, T: int, schema: FeatureSchema) -> Tuple[np.ndarray, np.ndarray]:
    """Node features (n, node_dim) and pair features (n(n-1)/2, pair_dim)"""
    n, b, k = g_t.n, schema.b, schema.c + 1
    labels = np.asarray(g_t.node_labels, dtype=np.int64)
    adjacency_labels = g_t.adjacency()
    adjacency = (adjacency_labels > 0).astype(np.float64)
    deg = adjacency.sum(axis=1)
    scale = max(n - 1, 1)
    time = t / T

    node_onehot = np.eye(b)[labels].reshape(n, b)
    node_freq = node_onehot.mean(axis=0) if n else np.zeros(b)
    rows, cols = pair_indices(n)
    pair_states = adjacency_labels[rows, cols]
    pair_onehot = np.eye(k)[pair_states].reshape(-1, k)
    edge_freq = pair_onehot.mean(axis=0) if len(rows) else np.eye(k)[0]
    summary = np.array([
        deg.mean() / scale if n else 0.0,
        deg.max() / scale if n else 0.0,
        float((deg == 0).mean()) if n else 0.0,
    ])

    node_features = np.hstack([
        node_onehot,
        np.full((n, 1), time),
        (deg / scale)[:, None],
        np.tile(summary, (n, 1)),
        np.tile(node_freq, (n, 1)),
        np.tile(edge_freq, (n, 1)),
        np.ones((n, 1)),
    ])

    m = len(rows)
    aa = np.log1p(adamic_adar(adjacency)[rows, cols]) if m else np.zeros(0)
    dist = np.eye(DISTANCE_BUCKETS)[distance_buckets(adjacency)[rows, cols]].reshape(m, DISTANCE_BUCKETS)
    degs = np.sort(np.stack([deg[rows], deg[cols]], axis=1), axis=1) / scale
    pair_features = np.hstack([
        pair_onehot,
        aa[:, None],
        dist,
        degs.reshape(m, 2),
        np.full((m, 1), time),
        (node_onehot[rows] + node_onehot[cols]).reshape(m, b),
        np.tile(edge_freq, (m, 1)),
        np.ones((m, 1)),
    ])
    return node_features, pair_features


# ==============================
# Featurized linear-softmax model
# ==============================

@dataclass
class TrainConfig:
    lam: float = EDGE_LOSS_WEIGHT
    lr: float = LEARNING_RATE
    momentum: float = MOMENTUM
    steps: int = TRAIN_STEPS
    batch_size: int = BATCH_SIZE
    log_every: int = LOG_EVERY
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"Edge loss weight must be non-negative, got {self.lam}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


@dataclass
class TrainState:
    W_X: np.ndarray
    W_E: np.ndarray
    V_X: np.ndarray
    V_E: np.ndarray
    lam: float = EDGE_LOSS_WEIGHT
    step: int = 0
    loss_trace: List[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, schema: FeatureSchema, lam: float = EDGE_LOSS_WEIGHT) -> "TrainState":
        W_X = np.zeros((schema.node_dim, schema.b))
        W_E = np.zeros((schema.pair_dim, schema.c + 1))
        return cls(W_X=W_X, W_E=W_E, V_X=np.zeros_like(W_X), V_E=np.zeros_like(W_E), lam=lam)


@dataclass
class Batch:
    node_features: np.ndarray
    node_targets: np.ndarray
    pair_features: np.ndarray
    pair_targets: np.ndarray


def _softmax_ce(features: np.ndarray, targets: np.ndarray, W: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(features W) and its gradient w.r.t. W"""
    if features.shape[0] == 0:
        return 0.0, np.zeros_like(W)
    logits = features @ W
    log_p = log_softmax(logits, axis=1)
    rows = np.arange(features.shape[0])
    loss = -log_p[rows, targets].mean()
    delta = np.exp(log_p)
    delta[rows, targets] -= 1.0
    return float(loss), features.T @ delta / features.shape[0]


def loss_and_gradients(W_X: np.ndarray, W_E: np.ndarray, batch: Batch,
                       lam: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """CE(p_X, X) + lam * CE(p_E, E) and its gradients (p - y) features"""
    loss_x, grad_x = _softmax_ce(batch.node_features, batch.node_targets, W_X)
    loss_e, grad_e = _softmax_ce(batch.pair_features, batch.pair_targets, W_E)
    return loss_x + lam * loss_e, grad_x, lam * grad_e


class FeaturizedDenoiser(Denoiser):
    def __init__(self, state: TrainState, label_spaces: LabelSpaces, T: int):
        self.state = state
        self.label_spaces = label_spaces
        self.schema = FeatureSchema(label_spaces.b, label_spaces.c)
        self.T = T
        if state.W_X.shape != (self.schema.node_dim, label_spaces.b) or \
                state.W_E.shape != (self.schema.pair_dim, label_spaces.edge_states):
            raise SchemaMismatchError("Weight shapes do not match the feature schema")

    def predict(self, g_t: LabeledGraph, t: int) -> GraphDistributions:
        node_features, pair_features = compute_features(g_t, t, self.T, self.schema)
        return GraphDistributions(
            node_dist=softmax(node_features @ self.state.W_X, axis=1),
            edge_dist=softmax(pair_features @ self.state.W_E, axis=1),
        )


def make_batch(graphs: Sequence[LabeledGraph], schedule: NoiseSchedule, schema: FeatureSchema,
               rng: np.random.Generator) -> Batch:
    """Noise each clean graph at a uniform t and pair its features with clean targets"""
    nx_parts, ny_parts, ex_parts, ey_parts = [], [], [], []
    for g in graphs:
        t = int(rng.integers(1, schedule.T + 1))
        g_t = apply_forward(g, t, schedule, rng)
        node_features, pair_features = compute_features(g_t, t, schedule.T, schema)
        nx_parts.append(node_features)
        ny_parts.append(np.asarray(g.node_labels, dtype=np.int64))
        ex_parts.append(pair_features)
        ey_parts.append(g.pair_labels())
    return Batch(
        node_features=np.vstack(nx_parts) if nx_parts else np.zeros((0, schema.node_dim)),
        node_targets=np.concatenate(ny_parts) if ny_parts else np.zeros(0, dtype=np.int64),
        pair_features=np.vstack(ex_parts) if ex_parts else np.zeros((0, schema.pair_dim)),
        pair_targets=np.concatenate(ey_parts) if ey_parts else np.zeros(0, dtype=np.int64),
    )


def train_denoiser(train: Sequence[LabeledGraph], schedule: NoiseSchedule, config: TrainConfig,
                   label_spaces: Optional[LabelSpaces] = None) -> TrainState:
    if not train:
        raise ValueError("Cannot train on an empty dataset")
    spaces = label_spaces or LabelSpaces.infer(train)
    for g in train:
        spaces.check_graph(g)
    if spaces.b != schedule.b or spaces.edge_states != schedule.edge_states:
        raise SchemaMismatchError(
            f"Schedule built for b={schedule.b}, {schedule.edge_states} edge states; data has "
            f"b={spaces.b}, {spaces.edge_states}"
        )
    schema = FeatureSchema(spaces.b, spaces.c)
    state = TrainState.zeros(schema, config.lam)
    rng = np.random.default_rng(config.seed)
    window: List[float] = []

    for step in range(1, config.steps + 1):
        picks = rng.integers(0, len(train), size=config.batch_size)
        batch = make_batch([train[k] for k in picks], schedule, schema, rng)
        loss, grad_x, grad_e = loss_and_gradients(state.W_X, state.W_E, batch, config.lam)
        if not math.isfinite(loss):
            raise TrainingDivergedError(step)
        state.V_X = config.momentum * state.V_X - config.lr * grad_x
        state.V_E = config.momentum * state.V_E - config.lr * grad_e
        state.W_X = state.W_X + state.V_X
        state.W_E = state.W_E + state.V_E
        state.step = step
        state.loss_trace.append(loss)
        window.append(loss)
        if config.log_every and step % config.log_every == 0:
            logger.info("step %d/%d loss %.4f", step, config.steps, float(np.mean(window)))
            window.clear()
    if not (np.all(np.isfinite(state.W_X)) and np.all(np.isfinite(state.W_E))):
        raise TrainingDivergedError(state.step)
    return state


# ==============================
# Checkpoints
# ==============================

@dataclass
class Checkpoint:
    denoiser: FeaturizedDenoiser
    schedule: NoiseSchedule
    node_counts: Dict[int, float]
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def label_spaces(self) -> LabelSpaces:
        return self.denoiser.label_spaces

    def to_dict(self) -> Dict[str, Any]:
        state = self.denoiser.state
        return {
            "schema": CHECKPOINT_SCHEMA,
            "feature_schema": self.denoiser.schema.schema_id,
            "label_spaces": self.label_spaces.to_dict(),
            "schedule": self.schedule.to_dict(),
            "node_counts": {str(n): p for n, p in self.node_counts.items()},
            "lambda": state.lam,
            "step": state.step,
            "weights": {"node": state.W_X.tolist(), "edge": state.W_E.tolist()},
            "config": self.config,
        }

    def save_to_file(self, filepath: Union[str, Path]) -> None:
        path = Path(filepath)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Checkpoint":
        if data.get("schema") != CHECKPOINT_SCHEMA:
            raise SchemaMismatchError(f"Unsupported checkpoint schema {data.get('schema')!r}")
        spaces = LabelSpaces(**data["label_spaces"])
        expected = FeatureSchema(spaces.b, spaces.c).schema_id
        if data.get("feature_schema") != expected:
            raise SchemaMismatchError(f"Feature schema {data.get('feature_schema')!r} != {expected!r}")
        W_X = np.asarray(data["weights"]["node"], dtype=np.float64)
        W_E = np.asarray(data["weights"]["edge"], dtype=np.float64)
        state = TrainState(W_X=W_X, W_E=W_E, V_X=np.zeros_like(W_X), V_E=np.zeros_like(W_E),
                           lam=data.get("lambda", EDGE_LOSS_WEIGHT), step=data.get("step", 0))
        schedule = NoiseSchedule.from_dict(data["schedule"])
        return cls(
            denoiser=FeaturizedDenoiser(state, spaces, schedule.T),
            schedule=schedule,
            node_counts={int(n): float(p) for n, p in data["node_counts"].items()},
            config=data.get("config", {}),
        )

    @classmethod
    def load_from_file(cls, filepath: Union[str, Path]) -> "Checkpoint":
        with open(filepath, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


# ==============================
# Count-based baseline
# ==============================

@dataclass
class BaselineModel:
    """Node-count categorical, node-type categorical, edge state per endpoint type pair"""
    node_counts: Dict[int, float]
    node_types: np.ndarray
    edge_states: np.ndarray  # (b, b, c+1), symmetric in the first two axes

    @property
    def label_spaces(self) -> LabelSpaces:
        return LabelSpaces(self.node_types.shape[0], self.edge_states.shape[2] - 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node_counts": {str(n): p for n, p in self.node_counts.items()},
            "node_types": self.node_types.tolist(),
            "edge_states": self.edge_states.tolist(),
        }


def _smooth(counts: np.ndarray) -> np.ndarray:
    counts = np.where(counts == 0, BASELINE_SMOOTHING, counts)
    return counts / counts.sum(axis=-1, keepdims=True)


def baseline_fit(train: Sequence[LabeledGraph], label_spaces: Optional[LabelSpaces] = None) -> BaselineModel:
    if not train:
        raise ValueError("Cannot fit the baseline on an empty dataset")
    spaces = label_spaces or LabelSpaces.infer(train)
    b, k = spaces.b, spaces.edge_states
    type_counts = np.zeros(b)
    pair_counts = np.zeros((b, b, k))
    for g in train:
        labels = np.asarray(g.node_labels, dtype=np.int64)
        type_counts += np.bincount(labels, minlength=b)[:b]
        rows, cols = pair_indices(g.n)
        states = g.pair_labels()
        lo, hi = np.minimum(labels[rows], labels[cols]), np.maximum(labels[rows], labels[cols])
        np.add.at(pair_counts, (lo, hi, states), 1.0)
    diagonal = np.arange(b)
    mirrored = pair_counts + np.transpose(pair_counts, (1, 0, 2))
    mirrored[diagonal, diagonal] = pair_counts[diagonal, diagonal]
    pair_counts = mirrored
    seen = pair_counts.sum(axis=2) > 0
    edge_states = np.empty_like(pair_counts)
    edge_states[seen] = pair_counts[seen] / pair_counts[seen].sum(axis=1, keepdims=True)
    # type pairs never observed fall back to a smoothed uniform
    edge_states[~seen] = _smooth(np.zeros((int((~seen).sum()), k)))
    return BaselineModel(
        node_counts=node_count_distribution(train),
        node_types=_smooth(type_counts),
        edge_states=edge_states,
    )


def baseline_sample(model: BaselineModel, rng: np.random.Generator) -> LabeledGraph:
    sizes = list(model.node_counts)
    n = int(sizes[rng.choice(len(sizes), p=np.array(list(model.node_counts.values())))])
    labels = sample_categorical(np.tile(model.node_types, (n, 1)), rng) if n else np.zeros(0, dtype=np.int64)
    rows, cols = pair_indices(n)
    states = sample_categorical(model.edge_states[labels[rows], labels[cols]], rng)
    mask = states > 0
    return LabeledGraph(n, labels.tolist(), zip(rows[mask].tolist(), cols[mask].tolist(), states[mask].tolist()))
