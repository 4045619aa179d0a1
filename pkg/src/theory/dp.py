"""This module implements a generic dynamic programming engine over
states with weighted transitions:

``Answer[k][i] = f(agg_{j in T(i)} g(Answer[k-1][j], c[i][j]))``

States without transitions keep their previous value. The functions
``f`` and ``g`` and the aggregator are named entries of a catalog so
instances stay serializable.

Unreachable states carry the finite :data:`SENTINEL` instead of
infinity.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np

from src.errors import (
    ConfigError,
    DanglingEdge,
    NonFiniteValue,
    ParseError,
    ProblemTooLarge,
    ShapeMismatch,
)
from src.services.storage import read_json, write_json

#: Value of unreachable states.
SENTINEL = 1e18

#: Largest city count :func:`tsp_solve` accepts.
TSP_MAX_CITIES = 15

#: Decimals of serialized costs and states.
DECIMALS = 6

AGGREGATORS: Dict[str, Callable[[List[float]], float]] = {
    "min": min,
    "max": max,
    "sum": sum,
    "mean": lambda values: sum(values) / len(values),
}

BINARY: Dict[str, Callable[[float, float], float]] = {
    "add": lambda answer, cost: answer + cost,
    "mul": lambda answer, cost: answer * cost,
    "min_pair": min,
    "max_pair": max,
}

UNARY: Dict[str, Callable[[float], float]] = {
    "identity": lambda value: value,
    "increment": lambda value: value + 1,
}

Transition = Tuple[int, float]


@dataclass(frozen=True)
class DpInstance:
    """A dynamic programming instance.

    :param n: The state count.
    :type n: int
    :param transitions: ``(j, c[i][j])`` pairs of every state ``i``.
    :type transitions: Tuple[Tuple[Transition, ...], ...]
    :param init: ``Answer[0]``, one value per state.
    :type init: Tuple[float, ...]
    :param aggregator: ``min``, ``max``, ``sum`` or ``mean``.
    :type aggregator: str
    :param g: Catalog name of the binary function, defaults to "add"
    :type g: str, optional
    :param f: Catalog name of the unary function, defaults to "identity"
    :type f: str, optional
    """

    n: int
    transitions: Tuple[Tuple[Transition, ...], ...]
    init: Tuple[float, ...]
    aggregator: str
    g: str = "add"
    f: str = "identity"

    def __post_init__(self):
        if len(self.init) != self.n or len(self.transitions) != self.n:
            raise ShapeMismatch(f"Instance with {self.n} states needs {self.n} rows.")
        for state, row in enumerate(self.transitions):
            for target, _ in row:
                if not 0 <= target < self.n:
                    raise DanglingEdge(
                        f"State {state} references unknown state {target}."
                    )
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"Unknown aggregator {self.aggregator!r}.")
        if self.g not in BINARY or self.f not in UNARY:
            raise ConfigError(f"Unknown catalog functions {self.g!r}, {self.f!r}.")

    @property
    def edge_count(self) -> int:
        """Transitions over every state."""
        return sum(len(row) for row in self.transitions)

    def to_record(self) -> dict:
        """The instance file shape."""
        return {
            "n": self.n,
            "transitions": [
                [[target, cost] for target, cost in row] for row in self.transitions
            ],
            "init": list(self.init),
            "aggregator": self.aggregator,
            "g": self.g,
            "f": self.f,
        }


def instance_from_record(record: dict) -> DpInstance:
    """Read an instance from its file shape.

    :raises ParseError: A field is missing or malformed.
    """
    try:
        return DpInstance(
            n=int(record["n"]),
            transitions=tuple(
                tuple((int(target), float(cost)) for target, cost in row)
                for row in record["transitions"]
            ),
            init=tuple(float(value) for value in record["init"]),
            aggregator=record["aggregator"],
            g=record.get("g", "add"),
            f=record.get("f", "identity"),
        )
    except (KeyError, TypeError, ValueError) as error:
        raise ParseError(f"Malformed instance: {error}") from error


def save_instance(instance: DpInstance, path: str):
    """Write an instance file."""
    write_json(path, instance.to_record())


def load_instance(path: str) -> DpInstance:
    """Read an instance file."""
    return instance_from_record(read_json(path))


def _clamp(value: float) -> float:
    return math.copysign(SENTINEL, value) if math.isinf(value) else value


def _finite(values: List[float]) -> List[float]:
    if not all(math.isfinite(value) for value in values):
        raise NonFiniteValue("The dynamic program produced a non-finite value.")
    return values


def dp_run(instance: DpInstance, k: int) -> List[float]:
    """Iterate the update ``k`` times. Infinite initial values stand for
    unreached states and start at :data:`SENTINEL` with their sign.

    :param instance: The instance.
    :type instance: DpInstance
    :param k: The iteration count.
    :type k: int
    :raises ConfigError: ``k`` is negative.
    :raises NonFiniteValue: A cost or a computed value is not finite.
    :return: ``Answer[k]``.
    :rtype: List[float]
    """
    if k < 0:
        raise ConfigError("The iteration count must be non-negative.")
    aggregate = AGGREGATORS[instance.aggregator]
    g, f = BINARY[instance.g], UNARY[instance.f]
    for state, row in enumerate(instance.transitions):
        if not all(math.isfinite(cost) for _, cost in row):
            raise NonFiniteValue(f"State {state} has a non-finite transition cost.")
    answer = _finite([_clamp(value) for value in instance.init])
    for _ in range(k):
        answer = _finite(
            [
                f(aggregate([g(answer[target], cost) for target, cost in row]))
                if row
                else answer[state]
                for state, row in enumerate(instance.transitions)
            ]
        )
    return answer


def make_bellman_ford(graph: nx.DiGraph, source: int) -> DpInstance:
    """Single-source shortest paths as a dynamic program.

    Every state keeps itself as a zero-cost transition, so distances
    never increase across iterations and ``n - 1`` of them converge.

    :param graph: Nodes ``0..n-1``, edge costs under ``weight``.
    :type graph: nx.DiGraph
    :param source: The source node.
    :type source: int
    :return: The instance, :data:`SENTINEL` marking unreached states.
    :rtype: DpInstance
    """
    n = graph.number_of_nodes()
    incoming: List[List[Transition]] = [[(state, 0.0)] for state in range(n)]
    for tail, head, weight in sorted(graph.edges(data="weight", default=1.0)):
        incoming[head].append((tail, float(weight)))
    init = tuple(0.0 if state == source else SENTINEL for state in range(n))
    return DpInstance(n, tuple(tuple(row) for row in incoming), init, "min")


def shortest_paths(graph: nx.DiGraph, source: int) -> List[float]:
    """Bellman-Ford distances, :data:`SENTINEL` when unreachable."""
    n = graph.number_of_nodes()
    values = dp_run(make_bellman_ford(graph, source), max(n - 1, 0))
    return [min(value, SENTINEL) for value in values]


def make_lis(array: Sequence[float]) -> DpInstance:
    """Longest strictly increasing subsequence ending at every index.

    :param array: The values.
    :type array: Sequence[float]
    :return: The instance, states are array indices.
    :rtype: DpInstance
    """
    transitions = tuple(
        tuple((j, 1.0) for j in range(i) if array[j] < array[i])
        for i in range(len(array))
    )
    return DpInstance(len(array), transitions, tuple(1.0 for _ in array), "max")


def lis_length(array: Sequence[float]) -> int:
    """Length of the longest strictly increasing subsequence."""
    if not array:
        return 0
    return int(max(dp_run(make_lis(array), len(array) - 1)))


def tsp_solve(dist) -> float:
    """Cost of the cheapest tour over every city, by dynamic programming
    over visited subsets.

    :param dist: Square cost matrix.
    :type dist: array-like
    :raises ShapeMismatch: The matrix is not square.
    :raises ProblemTooLarge: More than :data:`TSP_MAX_CITIES` cities.
    :return: The optimal tour cost, 0 for a single city.
    :rtype: float
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeMismatch(f"Distance matrix has shape {dist.shape}.")
    n = dist.shape[0]
    if n > TSP_MAX_CITIES:
        raise ProblemTooLarge(f"{n} cities exceed the limit of {TSP_MAX_CITIES}.")
    if n <= 1:
        return 0.0
    full = 1 << (n - 1)
    # cost[mask, j]: cheapest path from city 0 through mask ending at city j + 1
    cost = np.full((full, n - 1), np.inf)
    for j in range(n - 1):
        cost[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full):
        for j in range(n - 1):
            if not mask & (1 << j) or not np.isfinite(cost[mask, j]):
                continue
            for nxt in range(n - 1):
                if mask & (1 << nxt):
                    continue
                extended = mask | (1 << nxt)
                candidate = cost[mask, j] + dist[j + 1, nxt + 1]
                if candidate < cost[extended, nxt]:
                    cost[extended, nxt] = candidate
    return float(min(cost[full - 1, j] + dist[j + 1, 0] for j in range(n - 1)))


def format_number(value: float) -> str:
    """Fixed decimal rendering of costs and states."""
    return f"{value:.{DECIMALS}f}"


def serialize_edge_list(instance: DpInstance) -> List[str]:
    """Tokens of an instance: every transition as ``i j c[i][j]``, then
    every state as ``i Answer[0][i]``.

    :param instance: The instance.
    :type instance: DpInstance
    :return: The tokens.
    :rtype: List[str]
    """
    tokens = []
    for state, row in enumerate(instance.transitions):
        for target, cost in row:
            tokens.extend((str(state), str(target), format_number(cost)))
    for state, value in enumerate(instance.init):
        tokens.extend((str(state), format_number(value)))
    return tokens


def parse_edge_list(
    tokens: Sequence[str], n: int, aggregator: str, g: str = "add", f: str = "identity"
) -> DpInstance:
    """Rebuild an instance from its tokens.

    :param tokens: Output of :func:`serialize_edge_list`.
    :type tokens: Sequence[str]
    :param n: The state count.
    :type n: int
    :param aggregator: The aggregator name.
    :type aggregator: str
    :param g: The binary function name, defaults to "add"
    :type g: str, optional
    :param f: The unary function name, defaults to "identity"
    :type f: str, optional
    :raises ParseError: The tokens do not match the layout.
    :return: The instance.
    :rtype: DpInstance
    """
    edge_tokens = len(tokens) - 2 * n
    if edge_tokens < 0 or edge_tokens % 3:
        raise ParseError(f"{len(tokens)} tokens do not fit {n} states.")
    rows: List[List[Transition]] = [[] for _ in range(n)]
    try:
        for start in range(0, edge_tokens, 3):
            state, target, cost = tokens[start : start + 3]
            rows[int(state)].append((int(target), float(cost)))
        init = [0.0] * n
        for start in range(edge_tokens, len(tokens), 2):
            init[int(tokens[start])] = float(tokens[start + 1])
    except (ValueError, IndexError) as error:
        raise ParseError(f"Malformed edge list: {error}") from error
    return DpInstance(
        n, tuple(tuple(row) for row in rows), tuple(init), aggregator, g, f
    )


def serialize_text(instance: DpInstance) -> str:
    """Whitespace separated tokens."""
    return " ".join(serialize_edge_list(instance))

