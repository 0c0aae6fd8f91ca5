"""
Evaluation suite: MMD^2 over degree, clustering, orbit, spectral and wavelet
statistics, ratio to the train/test reference, validity / uniqueness /
novelty, property rate and the TLS embedding of labeled cell graphs.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
from scipy.linalg import eigh, eigvalsh
from scipy.spatial.distance import cdist

from app.config.settings import (
    CLUSTERING_BINS,
    KAPPA_SIGMA,
    MMD_SIGMAS,
    SPECTRAL_BINS,
    TLS_B_LABEL,
    TLS_T_LABEL,
    TLS_THRESHOLD,
    WAVELET_BINS_PER_SCALE,
    WAVELET_SCALES,
)
from app.core.constraints import PropertyName, PropertySpec, full_check, is_acyclic, is_connected, is_lobster_forest, is_planar
from app.core.graph import IsomorphismIndex, LabeledGraph

logger = logging.getLogger(__name__)

KAPPA_COMPONENTS = 6
ORBIT_COUNT = 15


class Statistic(Enum):
    DEGREE = "degree"
    CLUSTERING = "clustering"
    ORBIT = "orbit"
    SPECTRAL = "spectral"
    WAVELET = "wavelet"


class Validity(Enum):
    PLANAR = "planar"
    TREE = "tree"
    LOBSTER = "lobster"
    TLS_LOW = "tls_low"
    TLS_HIGH = "tls_high"


# ==============================
# MMD
# ==============================

def _stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    width = max((len(v) for v in vectors), default=0)
    out = np.zeros((len(vectors), max(width, 1)))
    for k, v in enumerate(vectors):
        out[k, :len(v)] = v
    return out


def _normalize(rows: np.ndarray) -> np.ndarray:
    totals = rows.sum(axis=1, keepdims=True)
    return np.divide(rows, totals, out=np.zeros_like(rows), where=totals > 0)


def mmd2(set_a: Sequence[np.ndarray], set_b: Sequence[np.ndarray], sigma: float = 1.0,
         metric: str = "tv") -> float:
    """
    Biased V-statistic MMD^2 with kernel exp(-d^2 / 2 sigma^2).

    metric "tv": d is the total-variation distance between the zero-padded,
    normalized histograms. metric "euclidean": plain vectors.
    """
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("MMD needs two non-empty sets")
    stacked = _stack([np.asarray(v, dtype=np.float64).ravel() for v in list(set_a) + list(set_b)])
    if metric == "tv":
        stacked = _normalize(stacked)
        distance = lambda x, y: cdist(x, y, "cityblock") / 2.0
    elif metric == "euclidean":
        distance = lambda x, y: cdist(x, y, "euclidean")
    else:
        raise ValueError(f"Unknown MMD metric '{metric}'")
    a, b = stacked[:len(set_a)], stacked[len(set_a):]
    kernel = lambda x, y: np.exp(-distance(x, y) ** 2 / (2.0 * sigma * sigma))
    return float(kernel(a, a).mean() + kernel(b, b).mean() - 2.0 * kernel(a, b).mean())


# ==============================
# Graph statistics
# ==============================

def _connected_sets(adjacency: List[Set[int]], size: int) -> Iterator[Tuple[int, ...]]:
    """Each connected induced node set of the given size exactly once (ESU enumeration)"""

    def extend(subset: List[int], extension: Set[int], root: int, closed: Set[int]) -> Iterator[Tuple[int, ...]]:
        if len(subset) == size:
            yield tuple(subset)
            return
        extension = set(extension)
        while extension:
            w = extension.pop()
            exclusive = {u for u in adjacency[w] if u > root and u not in closed}
            yield from extend(subset + [w], extension | exclusive, root, closed | adjacency[w] | {w})

    for v in range(len(adjacency)):
        yield from extend([v], {u for u in adjacency[v] if u > v}, v, adjacency[v] | {v})


def _orbit_of(degree: int, edges: int, degrees: List[int]) -> int:
    if len(degrees) == 3:
        if edges == 3:
            return 3
        return 2 if degree == 2 else 1
    if edges == 3:
        if max(degrees) == 3:
            return 7 if degree == 3 else 6
        return 5 if degree == 2 else 4
    if edges == 4:
        if all(d == 2 for d in degrees):
            return 8
        return {1: 9, 2: 10, 3: 11}[degree]
    if edges == 5:
        return 13 if degree == 3 else 12
    return 14


def orbit_counts(g: LabeledGraph) -> np.ndarray:
    """
    Per-node counts of the 15 orbits of connected graphlets on 2-4 nodes:
      0 degree | 1, 2 path end / centre | 3 triangle | 4, 5 4-path end / inner
      6, 7 star leaf / centre | 8 4-cycle | 9, 10, 11 paw pendant / triangle / joint
      12, 13 diamond degree-2 / degree-3 | 14 K4
    """
    counts = np.zeros((g.n, ORBIT_COUNT), dtype=np.int64)
    adjacency: List[Set[int]] = [set() for _ in range(g.n)]
    for i, j, _ in g.edges:
        adjacency[i].add(j)
        adjacency[j].add(i)
    counts[:, 0] = [len(a) for a in adjacency]
    for size in (3, 4):
        for nodes in _connected_sets(adjacency, size):
            degrees = [sum(1 for u in nodes if u in adjacency[v]) for v in nodes]
            edges = sum(degrees) // 2
            for v, d in zip(nodes, degrees):
                counts[v, _orbit_of(d, edges, degrees)] += 1
    return counts


def normalized_laplacian_spectrum(g: LabeledGraph) -> np.ndarray:
    return eigvalsh(nx.normalized_laplacian_matrix(g.unlabeled().to_networkx(), nodelist=range(g.n)).toarray())


def wavelet_descriptor(g: LabeledGraph, scales: Sequence[float] = WAVELET_SCALES,
                       bins: int = WAVELET_BINS_PER_SCALE) -> np.ndarray:
    """Histograms of per-node heat-kernel energy ||row_i(exp(-s L))||^2, one per scale"""
    laplacian = nx.normalized_laplacian_matrix(g.unlabeled().to_networkx(), nodelist=range(g.n)).toarray()
    eigenvalues, eigenvectors = eigh(laplacian)
    parts = []
    for s in scales:
        energy = (eigenvectors ** 2) @ np.exp(-2.0 * s * eigenvalues)
        hist, _ = np.histogram(np.clip(energy, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
        parts.append(hist)
    return np.concatenate(parts).astype(np.float64)


@dataclass
class GraphStatistics:
    degree: np.ndarray
    clustering: np.ndarray
    orbit_counts: np.ndarray
    spectral: np.ndarray
    wavelet: np.ndarray

    def descriptor(self, statistic: Statistic) -> np.ndarray:
        if statistic == Statistic.ORBIT:
            return self.orbit_counts.mean(axis=0)
        return getattr(self, statistic.value)


def graph_statistics(g: LabeledGraph) -> GraphStatistics:
    if g.n < 1:
        raise ValueError("Graph statistics need at least one node")
    graph = g.unlabeled().to_networkx()
    clustering, _ = np.histogram(list(nx.clustering(graph).values()), bins=CLUSTERING_BINS, range=(0.0, 1.0))
    spectrum = np.clip(normalized_laplacian_spectrum(g), 0.0, 2.0)
    spectral, _ = np.histogram(spectrum, bins=SPECTRAL_BINS, range=(-1e-5, 2.0))
    return GraphStatistics(
        degree=np.array(nx.degree_histogram(graph), dtype=np.float64),
        clustering=clustering.astype(np.float64),
        orbit_counts=orbit_counts(g),
        spectral=spectral.astype(np.float64),
        wavelet=wavelet_descriptor(g),
    )


def compute_statistics(graphs: Sequence[LabeledGraph], jobs: int = 1) -> List[GraphStatistics]:
    if jobs > 1 and len(graphs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(graph_statistics, graphs))
    return [graph_statistics(g) for g in graphs]


def statistic_mmd2(stats_a: Sequence[GraphStatistics], stats_b: Sequence[GraphStatistics]) -> Dict[str, float]:
    return {
        s.value: mmd2([x.descriptor(s) for x in stats_a], [y.descriptor(s) for y in stats_b], MMD_SIGMAS[s.value])
        for s in Statistic
    }


def ratio(mmd: Dict[str, float], reference: Dict[str, float]) -> Optional[float]:
    """Mean of mmd / reference over statistics whose reference is non-zero; None when none is"""
    ratios = [mmd[name] / reference[name] for name in mmd if reference.get(name, 0.0) > 0.0]
    if not ratios:
        return None
    return float(np.mean(ratios))


# ==============================
# Validity, uniqueness, novelty
# ==============================

@dataclass
class VunResult:
    valid: float
    unique: float
    novel: float
    vun: float
    flags: List[Tuple[bool, bool, bool]] = field(default_factory=list)


def vun(generated: Sequence[LabeledGraph], train: Sequence[LabeledGraph],
        validity: Callable[[LabeledGraph], bool]) -> VunResult:
    if not generated:
        raise ValueError("V.U.N. needs at least one generated graph")
    seen = IsomorphismIndex()
    training = IsomorphismIndex(train)
    flags = []
    for g in generated:
        flags.append((bool(validity(g)), seen.add(g), g not in training))
    total = len(generated)
    return VunResult(
        valid=sum(f[0] for f in flags) / total,
        unique=sum(f[1] for f in flags) / total,
        novel=sum(f[2] for f in flags) / total,
        vun=sum(all(f) for f in flags) / total,
        flags=flags,
    )


# ==============================
# TLS content
# ==============================

def tls_embedding(g: LabeledGraph, b_label: int = TLS_B_LABEL, t_label: int = TLS_T_LABEL) -> np.ndarray:
    """
    kappa_i = (|E_BT| - |E_alpha| - sum_{j<=i} |E_gamma_j|) / (|E_BT| - |E_alpha|), i = 0..5.
    E_BT holds edges between B/T cells, alpha edges join two cells of the same type
    and a B-T edge is gamma_j when its B cell has j B neighbours.
    """
    if b_label == t_label:
        raise ValueError("B and T labels must differ")
    labels = g.node_labels
    b_neighbours = np.zeros(g.n, dtype=np.int64)
    for i, j, _ in g.edges:
        if labels[i] == b_label and labels[j] == b_label:
            b_neighbours[i] += 1
            b_neighbours[j] += 1
    total, alpha = 0, 0
    gamma = np.zeros(KAPPA_COMPONENTS, dtype=np.int64)
    for i, j, _ in g.edges:
        pair = {labels[i], labels[j]}
        if not pair <= {b_label, t_label}:
            continue
        total += 1
        if len(pair) == 1:
            alpha += 1
            continue
        b_cell = i if labels[i] == b_label else j
        if b_neighbours[b_cell] < KAPPA_COMPONENTS:
            gamma[b_neighbours[b_cell]] += 1
    denominator = total - alpha
    if denominator == 0:
        return np.zeros(KAPPA_COMPONENTS)
    return (denominator - np.cumsum(gamma)) / denominator


def tls_valid(g: LabeledGraph, mode: str, b_label: int = TLS_B_LABEL, t_label: int = TLS_T_LABEL) -> bool:
    if mode not in ("low", "high"):
        raise ValueError(f"TLS mode must be 'low' or 'high', got '{mode}'")
    if not (is_connected(g) and is_planar(g)):
        return False
    kappa = tls_embedding(g, b_label, t_label)
    return bool(kappa[1] < TLS_THRESHOLD) if mode == "low" else bool(kappa[2] > TLS_THRESHOLD)


def kappa_mmd2(generated: Sequence[LabeledGraph], reference: Sequence[LabeledGraph],
               b_label: int = TLS_B_LABEL, t_label: int = TLS_T_LABEL) -> List[float]:
    gen = np.array([tls_embedding(g, b_label, t_label) for g in generated])
    ref = np.array([tls_embedding(g, b_label, t_label) for g in reference])
    return [mmd2(gen[:, [i]], ref[:, [i]], KAPPA_SIGMA, metric="euclidean") for i in range(KAPPA_COMPONENTS)]


# ==============================
# Report
# ==============================

VALIDITY_PROPERTY = {
    Validity.PLANAR: PropertySpec(PropertyName.PLANAR),
    Validity.TREE: PropertySpec(PropertyName.ACYCLIC),
    Validity.LOBSTER: PropertySpec(PropertyName.LOBSTER),
    Validity.TLS_LOW: PropertySpec(PropertyName.PLANAR),
    Validity.TLS_HIGH: PropertySpec(PropertyName.PLANAR),
}


def validity_predicate(validity: Validity) -> Callable[[LabeledGraph], bool]:
    if validity == Validity.PLANAR:
        return lambda g: is_connected(g) and is_planar(g)
    if validity == Validity.TREE:
        return lambda g: is_connected(g) and is_acyclic(g)
    if validity == Validity.LOBSTER:
        return lambda g: is_connected(g) and is_lobster_forest(g)
    mode = "low" if validity == Validity.TLS_LOW else "high"
    return lambda g: tls_valid(g, mode)


@dataclass
class EvalReport:
    count: int
    mmd2: Dict[str, float]
    reference_mmd2: Dict[str, float]
    ratio: Optional[float]
    valid: float
    unique: float
    novel: float
    vun: float
    property_rate: float
    connected_rate: float
    kappa_mmd2: Optional[List[float]] = None
    tls_valid: Optional[float] = None

    @property
    def ratio_undefined(self) -> bool:
        return self.ratio is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": self.count,
            "mmd2": self.mmd2,
            "reference_mmd2": self.reference_mmd2,
            "ratio": self.ratio,
            "ratio_undefined": self.ratio_undefined,
            "valid": self.valid,
            "unique": self.unique,
            "novel": self.novel,
            "vun": self.vun,
            "property_rate": self.property_rate,
            "connected_rate": self.connected_rate,
            "kappa_mmd2": self.kappa_mmd2,
            "tls_valid": self.tls_valid,
        }


def evaluate(generated: Sequence[LabeledGraph], train: Sequence[LabeledGraph], test: Sequence[LabeledGraph],
             validity: Validity, prop: Optional[PropertySpec] = None, jobs: int = 1) -> EvalReport:
    """Generated vs test MMDs, the train vs test reference and the per-graph rates"""
    nonempty = [g for g in generated if g.n > 0]
    if len(nonempty) < len(generated):
        logger.warning("Ignoring %d empty generated graphs in MMD statistics", len(generated) - len(nonempty))
    if not nonempty or not train or not test:
        raise ValueError("evaluate needs non-empty generated, train and test sets")
    gen_stats = compute_statistics(nonempty, jobs)
    train_stats = compute_statistics(train, jobs)
    test_stats = compute_statistics(test, jobs)
    mmd = statistic_mmd2(gen_stats, test_stats)
    reference = statistic_mmd2(train_stats, test_stats)
    rates = vun(generated, train, validity_predicate(validity))
    prop = prop or VALIDITY_PROPERTY[validity]
    total = len(generated)

    report = EvalReport(
        count=total,
        mmd2=mmd,
        reference_mmd2=reference,
        ratio=ratio(mmd, reference),
        valid=rates.valid,
        unique=rates.unique,
        novel=rates.novel,
        vun=rates.vun,
        property_rate=sum(full_check(prop, g) for g in generated) / total,
        connected_rate=sum(is_connected(g) for g in generated) / total,
    )
    if validity in (Validity.TLS_LOW, Validity.TLS_HIGH):
        report.kappa_mmd2 = kappa_mmd2(generated, test)
        report.tls_valid = rates.valid
    if report.ratio_undefined:
        logger.warning("Ratio undefined: every train/test reference MMD is zero")
    return report
