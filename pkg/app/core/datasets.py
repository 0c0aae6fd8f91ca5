"""
Synthetic graph families (planar, tree, lobster, labeled cell graphs) and
train/val/test splitting.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay, QhullError

from app.config.settings import (
    CELLGRAPH_MEAN_DEGREE,
    CELLGRAPH_NODE_RANGE,
    CELLGRAPH_PHENOTYPES,
    DEFAULT_SPLIT_COUNTS,
    LOBSTER_BACKBONE,
    LOBSTER_NODE_RANGE,
    LOBSTER_P1,
    LOBSTER_P2,
    PLANAR_NODES,
    TREE_NODES,
)
from app.core.graph import LabeledGraph, LabelSpaces, write_graphs

logger = logging.getLogger(__name__)


class DatasetFamily(Enum):
    PLANAR = "planar"
    TREE = "tree"
    LOBSTER = "lobster"
    CELLGRAPH = "cellgraph"


# ==============================
# Generators
# ==============================

def delaunay_edges(points: np.ndarray) -> List[Tuple[int, int]]:
    triangulation = Delaunay(points)
    edges = set()
    for simplex in triangulation.simplices:
        a, b, c = sorted(int(v) for v in simplex)
        edges.update({(a, b), (a, c), (b, c)})
    return sorted(edges)


def _triangulate(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    while True:
        points = rng.random((n, 2))
        try:
            return points, delaunay_edges(points)
        except QhullError:
            logger.debug("Degenerate point set for n=%d, resampling", n)


def gen_planar(count: int, n: int = PLANAR_NODES, rng: Optional[np.random.Generator] = None) -> List[LabeledGraph]:
    """Delaunay triangulations of n uniform points in the unit square"""
    if n < 3:
        raise ValueError(f"Planar graphs need n >= 3, got {n}")
    rng = rng or np.random.default_rng()
    graphs = []
    for _ in range(count):
        _, edges = _triangulate(n, rng)
        graphs.append(LabeledGraph(n, (0,) * n, [(i, j, 1) for i, j in edges]))
    return graphs


def gen_tree(count: int, n: int = TREE_NODES, rng: Optional[np.random.Generator] = None) -> List[LabeledGraph]:
    """Uniform labeled trees by decoding random Prufer sequences"""
    if n < 2:
        raise ValueError(f"Trees need n >= 2, got {n}")
    rng = rng or np.random.default_rng()
    graphs = []
    for _ in range(count):
        if n == 2:
            edges = [(0, 1)]
        else:
            sequence = rng.integers(0, n, size=n - 2).tolist()
            edges = list(nx.from_prufer_sequence(sequence).edges())
        graphs.append(LabeledGraph(n, (0,) * n, [(i, j, 1) for i, j in edges]))
    return graphs


def lobster_graph(backbone: int, p1: float, p2: float, rng: np.random.Generator) -> LabeledGraph:
    """A backbone path; each backbone node may get one leaf, each such leaf one more"""
    edges = [(k, k + 1) for k in range(backbone - 1)]
    n = backbone
    for spine in range(backbone):
        if rng.random() < p1:
            leaf, n = n, n + 1
            edges.append((spine, leaf))
            if rng.random() < p2:
                edges.append((leaf, n))
                n += 1
    return LabeledGraph(n, (0,) * n, [(i, j, 1) for i, j in edges])


def gen_lobster(count: int, rng: Optional[np.random.Generator] = None, p1: float = LOBSTER_P1,
                p2: float = LOBSTER_P2, backbone: Tuple[int, int] = LOBSTER_BACKBONE,
                node_range: Tuple[int, int] = LOBSTER_NODE_RANGE) -> List[LabeledGraph]:
    lo, hi = node_range
    if backbone[1] + 2 * backbone[1] < lo or backbone[0] > hi:
        raise ValueError(f"Backbone range {backbone} cannot reach node range {node_range}")
    rng = rng or np.random.default_rng()
    graphs = []
    while len(graphs) < count:
        g = lobster_graph(int(rng.integers(backbone[0], backbone[1] + 1)), p1, p2, rng)
        if lo <= g.n <= hi:
            graphs.append(g)
    return graphs


def default_phenotype_marginals() -> np.ndarray:
    return np.full(CELLGRAPH_PHENOTYPES, 1.0 / CELLGRAPH_PHENOTYPES)


def gen_cellgraph(count: int, n_range: Tuple[int, int] = CELLGRAPH_NODE_RANGE,
                  phenotype_marginals: Optional[Sequence[float]] = None,
                  rng: Optional[np.random.Generator] = None, threshold: Optional[float] = None,
                  mean_degree: float = CELLGRAPH_MEAN_DEGREE) -> List[LabeledGraph]:
    """
    Delaunay graphs over random cell positions with long edges dropped and
    phenotypes drawn i.i.d. from the marginals. Without an explicit length
    threshold the shortest edges are kept up to the target mean degree.
    """
    marginals = np.asarray(phenotype_marginals if phenotype_marginals is not None
                           else default_phenotype_marginals(), dtype=np.float64)
    if marginals.ndim != 1 or np.any(marginals < 0) or abs(marginals.sum() - 1.0) > 1e-6:
        raise ValueError(f"Phenotype marginals must be a probability vector, got {marginals.tolist()}")
    lo, hi = n_range
    if lo < 3 or hi < lo:
        raise ValueError(f"Invalid node range {n_range}")
    rng = rng or np.random.default_rng()
    graphs = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        points, edges = _triangulate(n, rng)
        lengths = np.array([np.linalg.norm(points[i] - points[j]) for i, j in edges])
        if threshold is not None:
            kept = [e for e, length in zip(edges, lengths) if length <= threshold] if threshold > 0 else []
        else:
            budget = int(round(mean_degree * n / 2.0))
            kept = [edges[k] for k in sorted(np.argsort(lengths, kind="stable")[:budget])]
        labels = rng.choice(len(marginals), size=n, p=marginals / marginals.sum())
        graphs.append(LabeledGraph(n, labels.tolist(), [(i, j, 1) for i, j in kept]))
    return graphs


# ==============================
# Splits
# ==============================

@dataclass
class DatasetSplits:
    train: List[LabeledGraph]
    val: List[LabeledGraph]
    test: List[LabeledGraph]

    def as_dict(self) -> Dict[str, List[LabeledGraph]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_counts(total: int) -> Tuple[int, int, int]:
    """80/20 train/test, then 20% of train held out as validation"""
    test = max(1, round(0.2 * total))
    val = max(1, round(0.2 * (total - test)))
    return total - test - val, val, test


def split_graphs(graphs: Sequence[LabeledGraph], counts: Optional[Tuple[int, int, int]] = None,
                 rng: Optional[np.random.Generator] = None) -> DatasetSplits:
    counts = tuple(counts) if counts is not None else split_counts(len(graphs))
    if len(counts) != 3 or sum(counts) != len(graphs):
        raise ValueError(f"Split counts {counts} do not partition {len(graphs)} graphs")
    if min(counts) < 1:
        raise ValueError(f"Every split needs at least one graph, got {counts}")
    order = (rng or np.random.default_rng()).permutation(len(graphs))
    train_n, val_n, _ = counts
    pick = lambda idx: [graphs[k] for k in idx]
    return DatasetSplits(
        train=pick(order[:train_n]),
        val=pick(order[train_n:train_n + val_n]),
        test=pick(order[train_n + val_n:]),
    )


@dataclass
class DatasetSpec:
    family: DatasetFamily
    counts: Tuple[int, int, int] = DEFAULT_SPLIT_COUNTS
    n: Optional[int] = None
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ValueError(f"Split sizes must be three positive counts, got {self.counts}")

    @property
    def label_spaces(self) -> LabelSpaces:
        if self.family == DatasetFamily.CELLGRAPH:
            return LabelSpaces(CELLGRAPH_PHENOTYPES, 1)
        return LabelSpaces(1, 1)

    def generate(self) -> DatasetSplits:
        rng = np.random.default_rng(self.seed)
        total = sum(self.counts)
        if self.family == DatasetFamily.PLANAR:
            graphs = gen_planar(total, self.n or PLANAR_NODES, rng)
        elif self.family == DatasetFamily.TREE:
            graphs = gen_tree(total, self.n or TREE_NODES, rng)
        elif self.family == DatasetFamily.LOBSTER:
            graphs = gen_lobster(total, rng, **self.params)
        else:
            graphs = gen_cellgraph(total, rng=rng, **self.params)
        logger.info("Generated %d %s graphs", total, self.family.value)
        return split_graphs(graphs, self.counts, rng)


def save_splits(splits: DatasetSplits, out_dir: Union[str, Path], label_spaces: LabelSpaces,
                config: Optional[Dict[str, Any]] = None) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {}
    for name, graphs in splits.as_dict().items():
        paths[name] = out_dir / f"{name}.jsonl"
        write_graphs(graphs, paths[name], label_spaces, config)
    return paths
