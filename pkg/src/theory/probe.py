"""This module probes whether an LLM answers graph problems consistently
under node relabeling. Each problem is asked once as given and once per
permutation; answers to relabeled problems are mapped back through the
inverse permutation before comparison.
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ERROR_PERMUTATION, EmptyProbe, InvalidPermutation, ParseFailure
from src.models.graph import inverse_permutation
from src.services import prompts
from src.services.parsing import parse_path_answer
from src.theory.dp import format_number

logger = logging.getLogger(__name__)

WeightedEdge = Tuple[int, int, float]


@dataclass(frozen=True)
class GraphProblem:
    """A shortest path question on a weighted digraph.

    :param n: The node count.
    :type n: int
    :param edges: ``(u, v, cost)`` triples.
    :type edges: Tuple[WeightedEdge, ...]
    :param source: The start node.
    :type source: int
    :param target: The end node.
    :type target: int
    """

    n: int
    edges: Tuple[WeightedEdge, ...]
    source: int
    target: int

    def relabel(self, permutation: Sequence[int]) -> "GraphProblem":
        """The same problem where node ``i`` is called ``permutation[i]``.

        :raises InvalidPermutation: The permutation is not a bijection.
        """
        if sorted(int(item) for item in permutation) != list(range(self.n)):
            raise InvalidPermutation(ERROR_PERMUTATION.format(n=self.n - 1))
        return GraphProblem(
            self.n,
            tuple((permutation[u], permutation[v], cost) for u, v, cost in self.edges),
            permutation[self.source],
            permutation[self.target],
        )

    def prompt(self) -> str:
        """The rendered question."""
        edge_list = "\n".join(
            f"{u} {v} {format_number(cost)}" for u, v, cost in self.edges
        )
        return prompts.render(
            prompts.GRAPH_PROBLEM,
            {
                "edge_list": edge_list,
                "source": str(self.source),
                "target": str(self.target),
            },
        )


@dataclass(frozen=True)
class ProbeResult:
    """One problem asked under one permutation."""

    problem: int
    permutation: Tuple[int, ...]
    original: Optional[Tuple[int, ...]]
    permuted: Optional[Tuple[int, ...]]

    @property
    def agree(self) -> bool:
        """Both answers parsed and name the same path."""
        return self.original is not None and self.original == self.permuted

    def to_record(self) -> dict:
        """The suite report shape."""
        return {
            "problem": self.problem,
            "permutation": list(self.permutation),
            "original": None if self.original is None else list(self.original),
            "permuted": None if self.permuted is None else list(self.permuted),
            "agree": self.agree,
        }


@dataclass(frozen=True)
class ProbeReport:
    """Agreement of every probed pair."""

    results: Tuple[ProbeResult, ...]

    @property
    def agreement(self) -> float:
        """Share of pairs whose answers agree."""
        return sum(result.agree for result in self.results) / len(self.results)

    def to_record(self) -> dict:
        """The suite report shape."""
        return {
            "agreement": self.agreement,
            "pairs": len(self.results),
            "results": [result.to_record() for result in self.results],
        }


def _ask(client, problem: GraphProblem) -> Optional[Tuple[int, ...]]:
    exchange = client.chat(problem.prompt(), purpose=prompts.GRAPH_PROBLEM)
    try:
        return parse_path_answer(exchange.response)
    except ParseFailure as error:
        logger.warning("Graph problem answer is unusable: %s", error)
        return None


def permutation_probe(
    problems: Sequence[GraphProblem],
    permutations: Sequence[Sequence[int]],
    client,
    executor: Executor = None,
) -> ProbeReport:
    """Ask every problem under every permutation.

    :param problems: The problems.
    :type problems: Sequence[GraphProblem]
    :param permutations: Bijections on the node ids of each problem.
    :type permutations: Sequence[Sequence[int]]
    :param client: The LLM client.
    :type client: LlmClient
    :param executor: Runs the queries concurrently, defaults to None
    :type executor: Executor, optional
    :raises EmptyProbe: No problem or no permutation was given.
    :raises ServiceError: An LLM call failed.
    :return: The agreement report.
    :rtype: ProbeReport
    """
    if not problems or not permutations:
        raise EmptyProbe("The probe needs at least one problem and one permutation.")
    pairs = [
        (index, tuple(int(item) for item in permutation))
        for index in range(len(problems))
        for permutation in permutations
    ]
    variants = {pair: problems[pair[0]].relabel(pair[1]) for pair in pairs}
    # identity pairs reuse the original answer
    relabeled = [pair for pair in pairs if pair[1] != tuple(range(len(pair[1])))]
    queries = list(problems) + [variants[pair] for pair in relabeled]
    mapper = executor.map if executor else map
    answers = list(mapper(lambda problem: _ask(client, problem), queries))
    permuted = dict(zip(relabeled, answers[len(problems) :]))

    results = []
    for index, permutation in pairs:
        answer = permuted.get((index, permutation), answers[index])
        if answer is not None and (index, permutation) in permuted:
            inverse = inverse_permutation(permutation)
            if all(0 <= node < len(inverse) for node in answer):
                answer = tuple(inverse[node] for node in answer)
            else:
                answer = None
        results.append(ProbeResult(index, permutation, answers[index], answer))
    return ProbeReport(tuple(results))


def random_problem(n: int, seed: int) -> GraphProblem:
    """A random problem whose target is reachable from its source.

    :param n: The node count, at least 2.
    :type n: int
    :param seed: The random seed.
    :type seed: int
    :return: The problem.
    :rtype: GraphProblem
    """
    rng = np.random.default_rng(seed)
    order = [int(node) for node in rng.permutation(n)]
    edges = {(u, v) for u, v in zip(order, order[1:])}
    for u in range(n):
        for v in range(n):
            if u != v and rng.random() < 0.3:
                edges.add((u, v))
    weighted = tuple((u, v, float(rng.integers(1, 10))) for u, v in sorted(edges))
    return GraphProblem(n, weighted, order[0], order[-1])


def random_permutations(n: int, count: int, seed: int) -> List[Tuple[int, ...]]:
    """The identity followed by ``count - 1`` random permutations."""
    rng = np.random.default_rng(seed)
    drawn = [tuple(range(n))]
    drawn.extend(
        tuple(int(node) for node in rng.permutation(n)) for _ in range(count - 1)
    )
    return drawn[:count]
