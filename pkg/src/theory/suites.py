"""This module runs the theory suites and shapes their reports.

* ``dp`` compares the dynamic programs with their oracles and checks the
  edge-list serialization round trip.
* ``logits`` fits tabular logits on random path data and compares them
  with the closed-form frequencies.
* ``permute`` asks an LLM shortest path questions under relabeling.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from src.errors import ConfigError
from src.theory import dp, logits, oracles, probe

logger = logging.getLogger(__name__)

#: Largest gap between a fitted and a closed-form probability.
LOGIT_TOLERANCE = 1e-3

#: Every suite name.
SUITES = ("dp", "logits", "permute")


@dataclass
class Check:
    """The outcome of one comparison over many cases."""

    name: str
    cases: int = 0
    failures: int = 0
    max_error: float = 0.0
    tolerance: float = 0.0

    def observe(self, error: float):
        """Account for one case."""
        self.cases += 1
        self.max_error = max(self.max_error, float(error))
        if error > self.tolerance:
            self.failures += 1

    @property
    def passed(self) -> bool:
        """Whether every case stayed within tolerance."""
        return self.failures == 0

    def to_record(self) -> dict:
        """The suite report shape."""
        return {
            "name": self.name,
            "passed": self.passed,
            "cases": self.cases,
            "failures": self.failures,
            "max_error": self.max_error,
        }


def _report(suite: str, checks: List[Check], **extra) -> dict:
    return {
        "suite": suite,
        "passed": all(check.passed for check in checks),
        "checks": [check.to_record() for check in checks],
        **extra,
    }


def run_dp(seed: int = 0) -> dict:
    """Dynamic programs against their oracles.

    :param seed: The base seed, defaults to 0
    :type seed: int, optional
    :return: The suite report.
    :rtype: dict
    """
    rng = np.random.default_rng(seed)
    shortest = Check("bellman_ford_vs_dijkstra")
    increasing = Check("lis_vs_exhaustive")
    tours = Check("held_karp_vs_brute_force", tolerance=1e-9)
    round_trip = Check("serialization_round_trip")

    for case in range(100):
        graph = oracles.random_digraph(int(rng.integers(1, 9)), seed + case)
        expected = oracles.dijkstra_distances(graph, 0)
        actual = dp.shortest_paths(graph, 0)
        shortest.observe(max(abs(a - b) for a, b in zip(actual, expected)))
        instance = dp.make_bellman_ford(graph, 0)
        parsed = dp.parse_edge_list(dp.serialize_edge_list(instance), instance.n, "min")
        round_trip.observe(0.0 if parsed == instance else 1.0)

    for _ in range(100):
        size = int(rng.integers(0, 11))
        array = [int(value) for value in rng.integers(0, 10, size=size)]
        increasing.observe(abs(dp.lis_length(array) - oracles.lis_exhaustive(array)))

    for _ in range(20):
        size = int(rng.integers(2, 8))
        dist = rng.integers(1, 10, size=(size, size)).astype(float)
        np.fill_diagonal(dist, 0.0)
        tours.observe(abs(dp.tsp_solve(dist) - oracles.tsp_brute_force(dist)))

    return _report("dp", [shortest, increasing, tours, round_trip])


def run_logits(seed: int = 0, steps: int = 6000, lr: float = 2.0) -> dict:
    """Fitted tabular logits against observed frequencies.

    :param seed: The base seed, defaults to 0
    :type seed: int, optional
    :param steps: Gradient steps per fit, defaults to 6000
    :type steps: int, optional
    :param lr: The learning rate, defaults to 2.0
    :type lr: float, optional
    :return: The suite report, with the unconstrained contexts of the
        two-path example.
    :rtype: dict
    """
    converged = Check("fit_matches_frequencies", tolerance=LOGIT_TOLERANCE)
    for case in range(20):
        dataset = logits.random_dataset(seed + case)
        fitted = logits.fit_tabular(dataset, steps=steps, lr=lr)
        converged.observe(logits.frequency_logits(dataset).distance(fitted))

    example = logits.frequency_logits(logits.example_dataset())
    unconstrained = example.unconstrained
    flagged = Check("example_context_unconstrained")
    flagged.observe(0.0 if ("d", "a") in unconstrained else 1.0)
    return _report(
        "logits",
        [converged, flagged],
        unconstrained=[list(context) for context in unconstrained],
    )


def run_permute(
    client,
    seed: int = 0,
    problems: int = 3,
    permutations: int = 3,
    nodes: int = 5,
    executor=None,
) -> dict:
    """Relabeling probe of an LLM.

    :param client: The LLM client.
    :type client: LlmClient
    :param seed: The base seed, defaults to 0
    :type seed: int, optional
    :param problems: Problem count, defaults to 3
    :type problems: int, optional
    :param permutations: Permutations per problem, the identity
        included, defaults to 3
    :type permutations: int, optional
    :param nodes: Nodes per problem, defaults to 5
    :type nodes: int, optional
    :param executor: Runs the queries concurrently, defaults to None
    :type executor: Executor, optional
    :raises ServiceError: An LLM call failed.
    :return: The suite report with the measured agreement.
    :rtype: dict
    """
    # pylint: disable=too-many-arguments
    drawn = [probe.random_problem(nodes, seed + index) for index in range(problems)]
    report = probe.permutation_probe(
        drawn, probe.random_permutations(nodes, permutations, seed), client, executor
    )
    identity = Check("identity_agreement")
    for result in report.results:
        if result.permutation == tuple(range(nodes)):
            identity.observe(0.0 if result.agree or result.original is None else 1.0)
    return _report("permute", [identity], probe=report.to_record())


RUNNERS: Dict[str, Callable[..., dict]] = {"dp": run_dp, "logits": run_logits}


def run_suite(name: str, seed: int = 0, client=None, executor=None) -> dict:
    """Run a suite by name.

    :param name: ``dp``, ``logits`` or ``permute``.
    :type name: str
    :param seed: The base seed, defaults to 0
    :type seed: int, optional
    :param client: The LLM client, needed by ``permute``
    :type client: LlmClient, optional
    :param executor: Runs probe queries concurrently, defaults to None
    :type executor: Executor, optional
    :raises ConfigError: The suite is unknown or misses its client.
    :return: The suite report.
    :rtype: dict
    """
    if name not in SUITES:
        raise ConfigError(f"Unknown theory suite {name!r}, expected one of {SUITES}.")
    logger.info("Running the %s theory suite", name)
    if name == "permute":
        if client is None:
            raise ConfigError("The permute suite needs an LLM client.")
        return run_permute(client, seed=seed, executor=executor)
    return RUNNERS[name](seed=seed)
