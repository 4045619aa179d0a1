"""This module implements the forward passes of the retrieval scorers.

Message passing runs on the symmetrized task graph: a directed link
``u -> v`` lets features flow both ways. Decoding constraints keep the
link direction, see :mod:`src.planner`.

* ``sgc`` propagates features ``K`` times through the normalized
  adjacency ``D^-1/2 (A_sym + I) D^-1/2``, without parameters.
* ``gcn`` multiplies ``Â H W`` per layer with a ReLU between layers and a
  linear last layer.
* ``sage`` combines a node's own features with the mean of its
  symmetrized neighbors through two linear maps, single linear layer.
"""
from dataclasses import dataclass
from typing import List

import numpy as np

from src.errors import ShapeMismatch
from src.models.gnn import Arch, GnnModel
from src.models.graph import TaskGraph


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Sparse symmetric-normalized adjacency with self-loops.

    :param n: The node count.
    :type n: int
    :param rows: Row index of every entry.
    :type rows: np.ndarray
    :param cols: Column index of every entry.
    :type cols: np.ndarray
    :param weights: Entry weights, all positive.
    :type weights: np.ndarray
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def entries(self) -> List[tuple]:
        """``(row, col, weight)`` triples in row-major order."""
        return [
            (int(row), int(col), float(weight))
            for row, col, weight in zip(self.rows, self.cols, self.weights)
        ]

    def dense(self) -> np.ndarray:
        """The dense ``(n, n)`` matrix."""
        matrix = np.zeros((self.n, self.n))
        matrix[self.rows, self.cols] = self.weights
        return matrix

    def propagate(self, x: np.ndarray) -> np.ndarray:
        """One product ``Â X``."""
        out = np.zeros((self.n, x.shape[1]))
        np.add.at(out, self.rows, self.weights[:, None] * x[self.cols])
        return out


def symmetric_neighbors(graph: TaskGraph) -> List[List[int]]:
    """Neighbors of every node on the symmetrized graph, self-links
    ignored, sorted by id.
    """
    neighbors = [set() for _ in graph.nodes]
    for edge in graph.edges:
        if edge.source != edge.target:
            neighbors[edge.source].add(edge.target)
            neighbors[edge.target].add(edge.source)
    return [sorted(item) for item in neighbors]


def build_adjacency(graph: TaskGraph) -> NormalizedAdjacency:
    """Symmetrize the links, add self-loops and normalize.

    :param graph: The task graph.
    :type graph: TaskGraph
    :return: The normalized adjacency.
    :rtype: NormalizedAdjacency
    """
    neighbors = symmetric_neighbors(graph)
    degree = np.array([1 + len(item) for item in neighbors], dtype=np.float64)
    rows, cols = [], []
    for node, adjacent in enumerate(neighbors):
        for other in sorted(set(adjacent) | {node}):
            rows.append(node)
            cols.append(other)
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    weights = 1.0 / np.sqrt(degree[rows] * degree[cols])
    return NormalizedAdjacency(len(graph), rows, cols, weights)


def _check_rows(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n:
        raise ShapeMismatch(f"Features have shape {x.shape}, expected {n} rows.")
    return x


def sgc_forward(adj: NormalizedAdjacency, x: np.ndarray, k: int = 1) -> np.ndarray:
    """Compute ``Â^k X``.

    :param adj: The normalized adjacency.
    :type adj: NormalizedAdjacency
    :param x: Node features, one row per node.
    :type x: np.ndarray
    :param k: Propagation steps, defaults to 1
    :type k: int, optional
    :raises ShapeMismatch: The row count differs from the node count or
        ``k`` is negative.
    :return: The propagated features.
    :rtype: np.ndarray
    """
    h = _check_rows(x, adj.n)
    if k < 0:
        raise ShapeMismatch("The propagation count must be non-negative.")
    for _ in range(k):
        h = adj.propagate(h)
    return h


def neighbor_mean(graph: TaskGraph, x: np.ndarray) -> np.ndarray:
    """Mean of the symmetrized neighbors' rows, zero for isolated nodes."""
    out = np.zeros_like(x)
    for node, adjacent in enumerate(symmetric_neighbors(graph)):
        if adjacent:
            out[node] = x[adjacent].mean(axis=0)
    return out


def _check_model(model: GnnModel, arch: Arch, x: np.ndarray):
    if model.arch is not arch:
        raise ShapeMismatch(f"Expected a {arch.value} model, got {model.arch.value}.")
    if x.shape[1] != model.dim_in:
        raise ShapeMismatch(
            f"Features have dimension {x.shape[1]}, model expects {model.dim_in}."
        )


def sage_forward(graph: TaskGraph, x: np.ndarray, model: GnnModel) -> np.ndarray:
    """Compute ``X W_self + mean_N(X) W_neigh``.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param x: Node features.
    :type x: np.ndarray
    :param model: A ``sage`` model.
    :type model: GnnModel
    :raises ShapeMismatch: Shapes or architecture disagree.
    :return: Final node embeddings.
    :rtype: np.ndarray
    """
    x = _check_rows(x, len(graph))
    _check_model(model, Arch.SAGE, x)
    w_self, w_neigh = model.weights
    return x @ w_self + neighbor_mean(graph, x) @ w_neigh


def gcn_forward(adj: NormalizedAdjacency, x: np.ndarray, model: GnnModel) -> np.ndarray:
    """Compute ``Â H W`` per layer with ReLU between layers.

    :param adj: The normalized adjacency.
    :type adj: NormalizedAdjacency
    :param x: Node features.
    :type x: np.ndarray
    :param model: A ``gcn`` model.
    :type model: GnnModel
    :raises ShapeMismatch: Shapes or architecture disagree.
    :return: Final node embeddings.
    :rtype: np.ndarray
    """
    h = _check_rows(x, adj.n)
    _check_model(model, Arch.GCN, h)
    last = len(model.weights) - 1
    for layer, weight in enumerate(model.weights):
        h = adj.propagate(h) @ weight
        if layer < last:
            h = np.maximum(h, 0.0)
    return h


def forward(
    graph: TaskGraph, x: np.ndarray, model: GnnModel, adj: NormalizedAdjacency = None
):
    """Final node embeddings for any architecture.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param x: Node features.
    :type x: np.ndarray
    :param model: The scorer.
    :type model: GnnModel
    :param adj: A prebuilt adjacency, defaults to None
    :type adj: NormalizedAdjacency, optional
    :return: Final node embeddings.
    :rtype: np.ndarray
    """
    if model.arch is Arch.SAGE:
        return sage_forward(graph, x, model)
    adj = adj or build_adjacency(graph)
    if model.arch is Arch.GCN:
        return gcn_forward(adj, x, model)
    return sgc_forward(adj, x, model.layers)
