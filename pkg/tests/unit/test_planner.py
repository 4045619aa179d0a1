"""This module defines unit test cases for the planning strategies defined
in :file:`planner.py` module.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from pytest_mock import MockerFixture as Mocker

from src.errors import ConfigError, EmptyDecomposition, ParseFailure
from src.models.graph import TaskGraph, inverse_permutation
from src.models.plan import (
    FLAG_ALIGNMENT_WARNING,
    FLAG_EMPTY_DECOMPOSITION,
    FLAG_INVALID_SELECTION,
    FLAG_PARSE_FAILURE,
    Argument,
)
from src.planner import (
    PlanningContext,
    SearchConfig,
    decompose_steps,
    fill_parameters,
    graph_search,
    plan_direct,
    plan_request,
    retrieve_path,
)
from src.services import prompts
from src.services.llm import LlmClient, MockTransport
from tests.conftest import LookupEmbedder, make_graph, make_random_graph


def _client(*responses) -> LlmClient:
    """A client answering every prompt with the first matching response."""
    table = [{"match": match, "response": text} for match, text in responses]
    return LlmClient(MockTransport(table))


def _embedder(mocker: Mocker, rows):
    embedder = mocker.MagicMock()
    embedder.embed_texts.return_value = np.asarray(rows, dtype=np.float64)
    return embedder


class TestDirect:
    """Test :func:`plan_direct` function."""

    def test_ground_truth(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """A well formed answer becomes the plan."""
        sample = samples[1]
        plan = plan_direct(sample.request, graph, mock_client, example=samples[0])
        assert plan.nodes == sample.gt_nodes
        assert plan.links == sample.gt_links
        assert plan.count_calls(prompts.DIRECT_INFERENCE) == 1
        assert not plan.failed

    def test_hallucination(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Unknown tasks are reported, not removed."""
        plan = plan_direct(samples[5].request, graph, mock_client)
        assert plan.nodes == ("Object Detection", "Image Captioning")
        assert plan.hallucinated_nodes == ("Image Captioning",)
        assert plan.hallucinated_links == (("Object Detection", "Image Captioning"),)

    def test_unusable(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Prose answers give a failed plan."""
        plan = plan_direct(samples[9].request, graph, mock_client)
        assert plan.failed
        assert plan.flags == (FLAG_PARSE_FAILURE,)
        assert plan.nodes == ()
        assert len(plan.exchanges) == 1


class TestDecompose:
    """Test :func:`decompose_steps` function."""

    def test_steps(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """The steps of the answer are returned."""
        sample = samples[6]
        decomposition = decompose_steps(sample.request, graph, mock_client)
        assert decomposition.steps == list(sample.steps)
        assert decomposition.exchange.purpose == prompts.STEPS_ONLY

    def test_empty(self, graph: TaskGraph):
        """No steps is an empty decomposition carrying the exchange."""
        with pytest.raises(EmptyDecomposition) as error:
            decompose_steps("x", graph, _client(([], '{"task_steps": []}')))
        assert error.value.exchange.response == '{"task_steps": []}'

    def test_unusable(self, graph: TaskGraph):
        """Answers without steps are parse failures."""
        with pytest.raises(ParseFailure):
            decompose_steps("x", graph, _client(([], "I cannot help")))


class TestRetrievePath:
    """Test :func:`retrieve_path` function."""

    def test_follows_out_neighbors(self, mocker: Mocker):
        """The next task is the best successor, not the best node."""
        graph = make_graph(["a", "b", "c"], [("a", "b"), ("a", "c")])
        embedder = _embedder(mocker, [[1.0, 0.0, 0.0], [0.9, 0.5, 0.7]])
        plan = retrieve_path(["one", "two"], graph, np.eye(3), embedder)
        assert plan.nodes == ("a", "c")
        assert plan.links == (("a", "c"),)
        assert plan.flags == ()

    def test_dead_end(self, mocker: Mocker):
        """A node without successors falls back to the best node."""
        graph = make_graph(["a", "b", "c"], [("a", "b")])
        embedder = _embedder(mocker, np.eye(3))
        plan = retrieve_path(["one", "two", "three"], graph, np.eye(3), embedder)
        assert plan.nodes == ("a", "b", "c")
        assert plan.links == (("a", "b"),)
        assert plan.flags == ("DeadEnd:step=2",)

    def test_ties_smallest_id(self, mocker: Mocker):
        """Equal scores choose the smallest id."""
        graph = make_graph(["a", "b"], [("b", "a")])
        embedder = _embedder(mocker, [[1.0, 1.0]])
        plan = retrieve_path(["one"], graph, np.ones((2, 2)), embedder)
        assert plan.nodes == ("a",)

    def test_random_graphs_stay_on_graph(self):
        """Plans only name tasks and links of the graph."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            graph = make_random_graph(rng, int(rng.integers(1, 9)))
            dim = int(rng.integers(2, 9))
            steps = [f"step{index}" for index in range(int(rng.integers(1, 6)))]
            table = {step: rng.standard_normal(dim) for step in steps}
            embedder = LookupEmbedder(table)
            h = rng.standard_normal((len(graph), dim))
            plan = retrieve_path(steps, graph, h, embedder)
            assert len(plan.nodes) == len(steps)
            assert all(graph.contains_node(name) for name in plan.nodes)
            assert all(graph.contains_edge(*link) for link in plan.links)
            assert plan.hallucinated_nodes == plan.hallucinated_links == ()
            assert len(plan.links) + len(plan.flags) == len(steps) - 1

    @pytest.mark.parametrize("seed", range(100))
    def test_relabel_invariance(self, seed):
        """Relabeling the graph and moving the embeddings with it picks
        the same tasks.
        """
        rng = np.random.default_rng(seed)
        graph = make_random_graph(rng, int(rng.integers(2, 9)), density=0.4)
        steps = [f"step{index}" for index in range(int(rng.integers(1, 6)))]
        embedder = LookupEmbedder({step: rng.standard_normal(4) for step in steps})
        h = rng.standard_normal((len(graph), 4))
        permutation = [int(item) for item in rng.permutation(len(graph))]
        relabeled = graph.relabel(permutation)
        moved = h[inverse_permutation(permutation)]
        original = retrieve_path(steps, graph, h, embedder)
        permuted = retrieve_path(steps, relabeled, moved, embedder)
        assert permuted.nodes == original.nodes
        assert permuted.links == original.links
        assert permuted.flags == original.flags


class TestGraphSearch:
    """Test :func:`graph_search` function."""

    @pytest.mark.parametrize("strategy", ["greedy", "adaptive"])
    def test_single_path(self, graph: TaskGraph, samples, mock_client, strategy):
        """Greedy and adaptive keep the only well scored path."""
        sample = samples[6]
        cfg = SearchConfig(strategy)
        plan = graph_search(sample.steps, graph, mock_client, cfg, sample.request)
        assert plan.nodes == sample.gt_nodes
        assert plan.links == sample.gt_links
        assert plan.count_calls(prompts.TASK_ASSESSMENT) == len(sample.steps)
        assert plan.count_calls(prompts.PATH_SELECTION) == 0

    def test_beam(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Beam keeps two paths and falls back to the best ranked one."""
        sample = samples[1]
        cfg = SearchConfig("beam")
        plan = graph_search(sample.steps, graph, mock_client, cfg, sample.request)
        assert plan.nodes == ("Image-to-Text", "Text-to-Speech")
        assert plan.count_calls(prompts.TASK_ASSESSMENT) == 2
        assert plan.count_calls(prompts.PATH_SELECTION) == 1
        assert FLAG_INVALID_SELECTION in plan.flags
        assert "DeadEnd:step=1" in plan.flags

    def test_selection(self, graph: TaskGraph):
        """A valid selection picks its path."""
        client = _client(
            (
                ["# SOLUTION LIST #"],
                '{"best_solution": ["Text Generation", "Text-to-Image"]}',
            ),
            (["# STEP #\nfirst\n"], '{"Text Generation": 5, "Image-to-Text": 4}'),
            (["# STEP #\nsecond\n"], '{"Text-to-Speech": 5, "Text-to-Image": 5}'),
        )
        plan = graph_search(["first", "second"], graph, client, SearchConfig("beam"))
        assert plan.nodes == ("Text Generation", "Text-to-Image")
        assert FLAG_INVALID_SELECTION not in plan.flags

    def test_unusable_assessment(self, graph: TaskGraph):
        """Unusable scores rate every candidate 1."""
        client = _client(([], "no idea"))
        plan = graph_search(["only"], graph, client, SearchConfig("greedy"))
        assert plan.nodes == ("Image-to-Text",)
        assert FLAG_PARSE_FAILURE in plan.flags

    def test_capped_first_step(self, graph: TaskGraph, mocker: Mocker):
        """Capping asks only about the best embedded tasks."""
        client = _client(([], "{}"))
        embedder = mocker.MagicMock()
        embedder.embed_one.return_value = np.eye(len(graph))[3]
        cfg = SearchConfig(step1_candidates="top_m_by_embedding", m=1)
        plan = graph_search(
            ["only"], graph, client, cfg, h=np.eye(len(graph)), step_embedder=embedder
        )
        assert plan.nodes == ("Image Classification",)
        assert '"Image-to-Text"' not in plan.exchanges[0].prompt

    def test_capped_needs_embeddings(self, graph: TaskGraph):
        """Capping without embeddings is misconfigured."""
        cfg = SearchConfig(step1_candidates="top_m_by_embedding")
        with pytest.raises(ConfigError):
            graph_search(["only"], graph, _client(([], "{}")), cfg)

    def test_executor(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Concurrent assessments give the same plan."""
        sample = samples[1]
        cfg = SearchConfig("beam")
        with ThreadPoolExecutor(max_workers=2) as executor:
            pooled = graph_search(
                sample.steps, graph, mock_client, cfg, executor=executor
            )
        serial = graph_search(sample.steps, graph, mock_client, cfg)
        assert pooled.nodes == serial.nodes
        assert pooled.flags == serial.flags

    @pytest.mark.parametrize(
        "options",
        [
            {"strategy": "direct"},
            {"threshold": 0},
            {"beam_width": 0},
            {"step1_candidates": "some"},
        ],
    )
    def test_invalid_config(self, options):
        """Invalid search settings are configuration errors."""
        with pytest.raises(ConfigError):
            SearchConfig(**options)


class TestFillParameters:
    """Test :func:`fill_parameters` function."""

    def test_positional(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Arguments attach in plan order."""
        sample = samples[1]
        plan = plan_direct(sample.request, graph, mock_client)
        filled = fill_parameters(sample.request, plan, graph, mock_client)
        assert filled.arguments == sample.arguments
        assert filled.count_calls(prompts.PARAMETER_FILL) == 1

    def test_misaligned(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Short answers are matched by name and flagged."""
        sample = samples[1]
        plan = plan_direct(sample.request, graph, mock_client)
        client = _client(
            ([], '{"task_nodes": [{"task": "Text-to-Speech", "arguments": ["x"]}]}')
        )
        filled = fill_parameters(sample.request, plan, graph, client)
        assert filled.arguments == ((), (Argument("x"),))
        assert FLAG_ALIGNMENT_WARNING in filled.flags

    def test_unusable(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Unusable answers keep the plan without arguments."""
        sample = samples[1]
        plan = plan_direct(sample.request, graph, mock_client)
        filled = fill_parameters(sample.request, plan, graph, _client(([], "sorry")))
        assert filled.arguments == plan.arguments
        assert filled.nodes == plan.nodes
        assert FLAG_PARSE_FAILURE in filled.flags


class TestPlanRequest:
    """Test :func:`plan_request` function."""

    def test_search_with_fill(self, graph: TaskGraph, samples, mock_client: LlmClient):
        """Decomposition, assessments and filling are all counted."""
        sample = samples[3]
        ctx = PlanningContext(graph, mock_client, fill=True)
        plan = plan_request(sample.request, "greedy", ctx)
        assert plan.nodes == sample.gt_nodes
        assert plan.arguments == sample.arguments
        assert plan.count_calls(prompts.STEPS_ONLY) == 1
        assert len(plan.exchanges) == 2 + len(sample.steps)

    def test_retrieval(
        self, graph: TaskGraph, samples, mock_client: LlmClient, mocker: Mocker
    ):
        """Retrieval needs one call and never hallucinates."""
        sample = samples[1]
        rows = np.eye(len(graph))[[graph.node_id(name) for name in sample.gt_nodes]]
        embedder = _embedder(mocker, rows)
        ctx = PlanningContext(graph, mock_client, embedder, np.eye(len(graph)))
        plan = plan_request(sample.request, "sgc", ctx)
        assert plan.nodes == sample.gt_nodes
        assert plan.hallucinated_nodes == ()
        assert len(plan.exchanges) == 1

    def test_retrieval_needs_embeddings(self, graph: TaskGraph, samples, mock_client):
        """Retrieval strategies need a scorer."""
        with pytest.raises(ConfigError):
            ctx = PlanningContext(graph, mock_client)
            plan_request(samples[1].request, "sage", ctx)

    def test_unknown_strategy(self, graph: TaskGraph, mock_client: LlmClient):
        """Strategies are validated."""
        with pytest.raises(ConfigError):
            plan_request("x", "random", PlanningContext(graph, mock_client))

    def test_failed_decomposition(self, graph: TaskGraph):
        """An empty decomposition gives a failed plan."""
        ctx = PlanningContext(graph, _client(([], '{"task_steps": []}')), fill=True)
        plan = plan_request("x", "beam", ctx)
        assert plan.failed
        assert plan.flags == (FLAG_EMPTY_DECOMPOSITION,)
        assert len(plan.exchanges) == 1

    def test_no_fill_for_hallucinations(self, graph: TaskGraph, samples, mock_client):
        """Plans naming unknown tasks are not filled."""
        ctx = PlanningContext(graph, mock_client, fill=True)
        plan = plan_request(samples[5].request, "direct", ctx)
        assert plan.count_calls(prompts.PARAMETER_FILL) == 0
