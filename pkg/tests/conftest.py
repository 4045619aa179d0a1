"""This module defines the fixtures shared by unit and functional
tests: the testing application, the bundled graph and samples, and a
client answering from the mock response table.

.. note:: Fixtures used by a single test type belong in that type's
    conftest.
"""
# pylint: disable=invalid-name
import os
from typing import Dict, List, NamedTuple

import numpy as np
import pytest
from flask import Flask

from src import create_app, extensions
from src.corpus import TrainTriplet, load_samples
from src.models.graph import TaskGraph, graph_from_record, load_graph
from src.models.plan import PlanSample
from src.services.embedding import EmbeddingProvider, HashEmbedder
from src.services.llm import LlmClient, MockTransport

#: The folder of the test fixture files.
FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

GRAPH_FILE = os.path.join(FIXTURES_DIR, "graph.json")
SAMPLES_FILE = os.path.join(FIXTURES_DIR, "samples.jsonl")
MOCK_FILE = os.path.join(FIXTURES_DIR, "mock_responses.json")


def make_graph(names, links=()) -> TaskGraph:
    """A graph whose descriptions repeat the task names.

    :param names: The task names in id order.
    :type names: Sequence[str]
    :param links: ``(source, target)`` name pairs, defaults to ()
    :type links: Sequence[Tuple[str, str]], optional
    :return: The graph.
    :rtype: TaskGraph
    """
    return graph_from_record(
        {
            "nodes": [{"name": name, "description": f"Task {name}"} for name in names],
            "links": [{"source": source, "target": target} for source, target in links],
        }
    )


def make_random_graph(rng: np.random.Generator, size: int, density=0.3) -> TaskGraph:
    """A random digraph without self links.

    :param rng: The random generator.
    :type rng: np.random.Generator
    :param size: The node count.
    :type size: int
    :param density: Probability of each ordered pair being linked,
        defaults to 0.3
    :type density: float, optional
    :return: The graph, nodes named ``task0`` onwards.
    :rtype: TaskGraph
    """
    names = [f"task{index}" for index in range(size)]
    links = [
        (names[source], names[target])
        for source in range(size)
        for target in range(size)
        if source != target and rng.random() < density
    ]
    return make_graph(names, links)


class LookupEmbedder(EmbeddingProvider):
    """Embeds texts from a fixed table of vectors."""

    kind = "lookup"

    def __init__(self, table: Dict[str, np.ndarray]):
        self.table = {
            text: np.asarray(row, dtype=np.float64) for text, row in table.items()
        }
        super().__init__(len(next(iter(self.table.values()))))

    def _embed(self, texts):
        return np.stack([self.table[text] for text in texts])


class SeparableInstance(NamedTuple):
    """A retrieval problem a ranking scorer can solve exactly."""

    graph: TaskGraph
    features: np.ndarray
    triplets: List[TrainTriplet]
    embedder: LookupEmbedder
    held_out: np.ndarray
    labels: np.ndarray


def _noisy_unit(rng: np.random.Generator, node: int, size: int, noise: float):
    vector = np.eye(size)[node] + noise * rng.standard_normal(size)
    return vector / np.linalg.norm(vector)


def make_separable_instance(
    size=32, steps_per_node=32, held_out_per_node=4, noise=0.1, seed=0
) -> SeparableInstance:
    """A ring of tasks with one-hot features. Every step is its task's
    feature plus Gaussian noise, normalized, and is paired with every
    other task as a negative.

    :param size: Node count and dimension, defaults to 32
    :type size: int, optional
    :param steps_per_node: Training steps per task, defaults to 32
    :type steps_per_node: int, optional
    :param held_out_per_node: Unseen steps per task, defaults to 4
    :type held_out_per_node: int, optional
    :param noise: Noise scale, defaults to 0.1
    :type noise: float, optional
    :param seed: Noise seed, defaults to 0
    :type seed: int, optional
    :return: The instance.
    :rtype: SeparableInstance
    """
    # pylint: disable=too-many-arguments
    rng = np.random.default_rng(seed)
    names = [f"task{index}" for index in range(size)]
    graph = make_graph(names, list(zip(names, names[1:] + names[:1])))
    table, triplets = {}, []
    for node in range(size):
        for copy in range(steps_per_node):
            text = f"step-{node}-{copy}"
            table[text] = _noisy_unit(rng, node, size, noise)
            triplets.extend(
                TrainTriplet(text, node, other)
                for other in range(size)
                if other != node
            )
    labels = np.repeat(np.arange(size), held_out_per_node)
    held_out = np.stack([_noisy_unit(rng, node, size, noise) for node in labels])
    return SeparableInstance(
        graph, np.eye(size), triplets, LookupEmbedder(table), held_out, labels
    )


@pytest.fixture(name="app")
def fixture_app() -> Flask:
    """The application under the testing configuration, with its
    context pushed so ``current_app`` resolves.

    :yield: The application instance.
    :rtype: Flask
    """
    os.environ["FLASK_TESTING"] = "True"
    application = create_app()
    ctx = application.app_context()
    ctx.push()

    yield application

    ctx.pop()
    extensions.recorder.stop()


@pytest.fixture(name="graph")
def fixture_graph() -> TaskGraph:
    """The ten task fixture graph."""
    return load_graph(GRAPH_FILE)


@pytest.fixture(name="samples")
def fixture_samples(graph: TaskGraph) -> List[PlanSample]:
    """The ten fixture samples, in file order."""
    return load_samples(SAMPLES_FILE, graph)


@pytest.fixture(name="mock_client")
def fixture_mock_client() -> LlmClient:
    """A client answering from the fixture response table."""
    return LlmClient(MockTransport.from_file(MOCK_FILE))


@pytest.fixture(name="embedder")
def fixture_embedder() -> HashEmbedder:
    """A deterministic offline embedder of dimension 16."""
    return HashEmbedder(dim=16, seed=0)
