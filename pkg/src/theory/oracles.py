"""Independent reference solvers the dynamic programs are checked
against."""
import math
from itertools import combinations, permutations
from typing import List, Sequence

import networkx as nx
import numpy as np

from src.theory.dp import SENTINEL


def dijkstra_distances(graph: nx.DiGraph, source: int) -> List[float]:
    """Shortest distances from ``source``, :data:`SENTINEL` when
    unreachable. Costs must be non-negative.
    """
    lengths = nx.single_source_dijkstra_path_length(graph, source, weight="weight")
    return [
        float(lengths.get(node, SENTINEL)) for node in range(graph.number_of_nodes())
    ]


def lis_exhaustive(array: Sequence[float]) -> int:
    """Longest strictly increasing subsequence by trying every subset,
    largest first.
    """
    for size in range(len(array), 0, -1):
        for indices in combinations(range(len(array)), size):
            values = [array[index] for index in indices]
            if all(a < b for a, b in zip(values, values[1:])):
                return size
    return 0


def tsp_brute_force(dist) -> float:
    """Cheapest tour by enumerating every city order."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n <= 1:
        return 0.0
    best = math.inf
    for order in permutations(range(1, n)):
        tour = (0,) + order + (0,)
        best = min(best, sum(dist[a, b] for a, b in zip(tour, tour[1:])))
    return float(best)


def random_digraph(
    n: int, seed: int, density: float = 0.4, max_cost: int = 9
) -> nx.DiGraph:
    """A random digraph on ``0..n-1`` with integer non-negative costs.

    :param n: The node count.
    :type n: int
    :param seed: The random seed.
    :type seed: int
    :param density: Probability of each ordered pair, defaults to 0.4
    :type density: float, optional
    :param max_cost: Largest edge cost, defaults to 9
    :type max_cost: int, optional
    :return: The graph.
    :rtype: nx.DiGraph
    """
    rng = np.random.default_rng(seed)
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    for tail in range(n):
        for head in range(n):
            if tail != head and rng.random() < density:
                graph.add_edge(tail, head, weight=float(rng.integers(0, max_cost + 1)))
    return graph
