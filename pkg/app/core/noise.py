"""
Noise schedules, transition matrices, forward noising and the closed-form
posterior that parameterizes the reverse process.

Node labels follow the marginal chain (cosine schedule, limit = node type
marginals). Edges follow the absorbing chain: an edge keeps its type or falls
into state 0 for good, so noising only ever deletes edges.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Tuple

import numpy as np

from app.config.settings import COSINE_S, POSTERIOR_FLOOR
from app.core.graph import GraphDistributions, LabeledGraph, pair_indices

logger = logging.getLogger(__name__)


class Chain(Enum):
    NODE = "node"
    EDGE = "edge"


@dataclass(frozen=True)
class TransitionMatrices:
    """One-step and cumulative matrices of both chains at a timestep"""
    QX_t: np.ndarray
    QE_t: np.ndarray
    QX_bar_t: np.ndarray
    QE_bar_t: np.ndarray


def cosine_alpha_bar(T: int, s: float = COSINE_S) -> np.ndarray:
    """Cumulative cosine schedule, length T+1, value 1 at t=0"""
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    return np.clip(f / f[0], 0.0, 1.0)


def transition_matrix(alpha: float, limit: np.ndarray) -> np.ndarray:
    """alpha * I + (1 - alpha) * 1 limit'"""
    k = limit.shape[0]
    return alpha * np.eye(k) + (1.0 - alpha) * np.outer(np.ones(k), limit)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of a (m, k) matrix of (unnormalized) probabilities"""
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def estimate_node_marginals(graphs: Iterable[LabeledGraph], b: int) -> np.ndarray:
    counts = np.zeros(b, dtype=np.float64)
    for g in graphs:
        counts += np.bincount(np.asarray(g.node_labels, dtype=np.int64), minlength=b)[:b]
    if counts.sum() == 0:
        raise ValueError("Cannot estimate node marginals from graphs without nodes")
    return counts / counts.sum()


def _posterior_table(Q_t: np.ndarray, Q_bar_prev: np.ndarray, Q_bar_t: np.ndarray) -> np.ndarray:
    """
    table[now, clean, prev] = q(prev | now, clean), zero where q(now | clean) = 0.
    """
    numer = Q_t.T[:, None, :] * Q_bar_prev[None, :, :]
    denom = Q_bar_t.T[:, :, None]
    total = np.maximum(numer.sum(axis=2, keepdims=True), POSTERIOR_FLOOR)
    return np.where(denom > 0, numer / total, 0.0)


@dataclass(eq=False)
class NoiseSchedule:
    T: int
    node_alpha: np.ndarray
    edge_alpha: np.ndarray
    node_alpha_bar: np.ndarray
    edge_alpha_bar: np.ndarray
    node_marginals: np.ndarray
    edge_states: int
    cosine_s: float = COSINE_S
    _tables: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        b, k = self.node_marginals.shape[0], self.edge_states
        self._tables["QX"] = np.stack([transition_matrix(a, self.node_marginals) for a in self.node_alpha])
        self._tables["QX_bar"] = np.stack([transition_matrix(a, self.node_marginals) for a in self.node_alpha_bar])
        absorbing = np.eye(k)[0]
        self._tables["QE"] = np.stack([transition_matrix(a, absorbing) for a in self.edge_alpha])
        self._tables["QE_bar"] = np.stack([transition_matrix(a, absorbing) for a in self.edge_alpha_bar])
        for chain, prefix in ((Chain.NODE, "QX"), (Chain.EDGE, "QE")):
            Q, Q_bar = self._tables[prefix], self._tables[f"{prefix}_bar"]
            posts = np.zeros((self.T + 1,) + (Q.shape[1],) * 3)
            for t in range(1, self.T + 1):
                posts[t] = _posterior_table(Q[t], Q_bar[t - 1], Q_bar[t])
            self._tables[f"{prefix}_post"] = posts
        logger.debug("Built schedule T=%d b=%d edge states=%d", self.T, b, k)

    @property
    def b(self) -> int:
        return self.node_marginals.shape[0]

    def _prefix(self, chain: Chain) -> str:
        return "QX" if chain == Chain.NODE else "QE"

    def Q(self, chain: Chain, t: int) -> np.ndarray:
        return self._tables[self._prefix(chain)][t]

    def Q_bar(self, chain: Chain, t: int) -> np.ndarray:
        return self._tables[f"{self._prefix(chain)}_bar"][t]

    def posterior_table(self, chain: Chain, t: int) -> np.ndarray:
        self._check_t(t)
        return self._tables[f"{self._prefix(chain)}_post"][t]

    def transition(self, t: int) -> TransitionMatrices:
        return TransitionMatrices(
            QX_t=self.Q(Chain.NODE, t),
            QE_t=self.Q(Chain.EDGE, t),
            QX_bar_t=self.Q_bar(Chain.NODE, t),
            QE_bar_t=self.Q_bar(Chain.EDGE, t),
        )

    def limit(self, chain: Chain) -> np.ndarray:
        return self.node_marginals if chain == Chain.NODE else np.eye(self.edge_states)[0]

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"Timestep {t} outside [1, {self.T}]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "schedule": "cosine",
            "edge_schedule": "absorbing",
            "cosine_s": self.cosine_s,
            "node_marginals": self.node_marginals.tolist(),
            "edge_states": self.edge_states,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseSchedule":
        if data.get("schedule", "cosine") != "cosine" or data.get("edge_schedule", "absorbing") != "absorbing":
            raise ValueError(f"Unsupported schedule combination: {data.get('schedule')}/{data.get('edge_schedule')}")
        return build_schedule(
            data["T"], np.asarray(data["node_marginals"], dtype=np.float64),
            edge_states=data["edge_states"], cosine_s=data.get("cosine_s", COSINE_S),
        )


def build_schedule(T: int, node_marginals: np.ndarray, edge_states: int = 2,
                   cosine_s: float = COSINE_S) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if edge_states < 2:
        raise ValueError(f"Need at least one real edge type, got {edge_states} edge states")
    marginals = np.asarray(node_marginals, dtype=np.float64)
    if marginals.ndim != 1 or marginals.size == 0 or np.any(marginals < 0) or abs(marginals.sum() - 1.0) > 1e-6:
        raise ValueError(f"Node marginals must be a probability vector, got {marginals.tolist()}")
    marginals = marginals / marginals.sum()

    node_alpha_bar_raw = cosine_alpha_bar(T, cosine_s)
    node_alpha = np.ones(T + 1)
    node_alpha[1:] = np.clip(
        node_alpha_bar_raw[1:] / np.maximum(node_alpha_bar_raw[:-1], POSTERIOR_FLOOR), 0.0, 1.0
    )
    node_alpha_bar = np.cumprod(node_alpha)

    steps = np.arange(T + 1, dtype=np.float64)
    edge_alpha_bar = 1.0 - steps / T
    edge_alpha = np.ones(T + 1)
    edge_alpha[1:] = 1.0 - 1.0 / (T - steps[1:] + 1.0)

    return NoiseSchedule(
        T=T,
        node_alpha=node_alpha,
        edge_alpha=edge_alpha,
        node_alpha_bar=node_alpha_bar,
        edge_alpha_bar=edge_alpha_bar,
        node_marginals=marginals,
        edge_states=edge_states,
        cosine_s=cosine_s,
    )


# ==============================
# Forward process
# ==============================

def apply_forward(g: LabeledGraph, t: int, schedule: NoiseSchedule, rng: np.random.Generator) -> LabeledGraph:
    """Sample G^t ~ X Q_X_bar^t x E Q_E_bar^t"""
    schedule._check_t(t)
    QX_bar = schedule.Q_bar(Chain.NODE, t)
    QE_bar = schedule.Q_bar(Chain.EDGE, t)
    labels = np.asarray(g.node_labels, dtype=np.int64)
    new_labels = sample_categorical(QX_bar[labels], rng) if g.n else labels
    if g.edges:
        current = np.array([label for _, _, label in g.edges], dtype=np.int64)
        new_edge_labels = sample_categorical(QE_bar[current], rng)
        edges = [(i, j, int(x)) for (i, j, _), x in zip(g.edges, new_edge_labels)]
    else:
        edges = []
    return LabeledGraph(g.n, new_labels.tolist(), edges)


def apply_step(g_prev: LabeledGraph, t: int, schedule: NoiseSchedule, rng: np.random.Generator) -> LabeledGraph:
    """Sample G^t ~ X^{t-1} Q_X^t x E^{t-1} Q_E^t (one forward step)"""
    schedule._check_t(t)
    QX = schedule.Q(Chain.NODE, t)
    QE = schedule.Q(Chain.EDGE, t)
    labels = np.asarray(g_prev.node_labels, dtype=np.int64)
    new_labels = sample_categorical(QX[labels], rng) if g_prev.n else labels
    edges = []
    if g_prev.edges:
        current = np.array([label for _, _, label in g_prev.edges], dtype=np.int64)
        new_edge_labels = sample_categorical(QE[current], rng)
        edges = [(i, j, int(x)) for (i, j, _), x in zip(g_prev.edges, new_edge_labels)]
    return LabeledGraph(g_prev.n, new_labels.tolist(), edges)


# ==============================
# Reverse process
# ==============================

def posterior_dist(one_hot_now: np.ndarray, one_hot_clean: np.ndarray, t: int,
                   schedule: NoiseSchedule, chain: Chain) -> np.ndarray:
    """
    q(x^{t-1} | x^t, x) proportional to x^t (Q^t)' * x Q_bar^{t-1}; the zero
    vector when x^t is unreachable from x.
    """
    schedule._check_t(t)
    Q_t = schedule.Q(chain, t)
    Q_bar_prev = schedule.Q_bar(chain, t - 1)
    Q_bar_t = schedule.Q_bar(chain, t)
    denom = float(one_hot_now @ Q_bar_t.T @ one_hot_clean)
    if denom <= 0.0:
        return np.zeros_like(Q_t[0])
    numer = (one_hot_now @ Q_t.T) * (one_hot_clean @ Q_bar_prev)
    return numer / max(numer.sum(), POSTERIOR_FLOOR)


def _marginalize(pred: np.ndarray, current: np.ndarray, table: np.ndarray) -> np.ndarray:
    if current.shape[0] == 0:
        return np.zeros((0, table.shape[2]))
    dist = np.einsum("pk,pkl->pl", pred, table[current])
    total = dist.sum(axis=1, keepdims=True)
    fallback = np.eye(table.shape[2])[current]
    # predictions with all mass on unreachable clean states leave the label unchanged
    return np.where(total > POSTERIOR_FLOOR, dist / np.maximum(total, POSTERIOR_FLOOR), fallback)


def reverse_step_dist(g_t: LabeledGraph, predictions: GraphDistributions, t: int,
                      schedule: NoiseSchedule) -> GraphDistributions:
    """p(x^{t-1} | G^t) = sum_x q(x^{t-1} | x^t, x) p_hat(x), per node and per pair"""
    node_now = np.asarray(g_t.node_labels, dtype=np.int64)
    edge_now = g_t.pair_labels()
    node_dist = _marginalize(predictions.node_dist, node_now, schedule.posterior_table(Chain.NODE, t))
    edge_dist = _marginalize(predictions.edge_dist, edge_now, schedule.posterior_table(Chain.EDGE, t))
    return GraphDistributions(node_dist=node_dist, edge_dist=edge_dist)


def sample_from_distributions(dists: GraphDistributions, rng: np.random.Generator) -> Tuple[LabeledGraph, np.ndarray]:
    """
    Draw a graph from independent per-node / per-pair distributions. Returns
    the graph and the probability of the drawn state of every pair.
    """
    n = dists.n
    labels = sample_categorical(dists.node_dist, rng)
    pair_states = sample_categorical(dists.edge_dist, rng)
    rows, cols = pair_indices(n)
    chosen = dists.edge_dist[np.arange(pair_states.shape[0]), pair_states] if n > 1 else np.zeros(0)
    mask = pair_states > 0
    edges = zip(rows[mask].tolist(), cols[mask].tolist(), pair_states[mask].tolist())
    return LabeledGraph(n, labels.tolist(), edges), chosen
