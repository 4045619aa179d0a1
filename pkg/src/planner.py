"""This module implements the planning strategies:

* ``direct``: one LLM call returns steps, task nodes and links.
* ``sgc``, ``sage`` and ``gcn``: the LLM only decomposes the request into
  steps; tasks are then retrieved on the graph by GNN scoring. The first
  task may be any node, every next task must be an out-neighbor of the
  previous one, so retrieved plans never hallucinate.
* ``greedy``, ``adaptive`` and ``beam``: after decomposition, the LLM
  scores candidate tasks step by step while the search walks the graph,
  then picks the best complete path.

Any strategy can be followed by an LLM call filling the invocation
arguments of the planned tasks.
"""
import json
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, EmptyDecomposition, ParseFailure
from src.models.exchange import LlmExchange
from src.models.graph import TaskGraph
from src.models.plan import (
    FLAG_ALIGNMENT_WARNING,
    FLAG_DEAD_END,
    FLAG_EMPTY_DECOMPOSITION,
    FLAG_INVALID_SELECTION,
    FLAG_PARSE_FAILURE,
    Plan,
    PlanSample,
    failed_plan,
)
from src.services import prompts
from src.services.parsing import (
    parse_arguments,
    parse_plan_json,
    parse_score_dict,
    parse_selection,
    parse_steps,
)

logger = logging.getLogger(__name__)

DIRECT = "direct"
RETRIEVAL = ("sgc", "sage", "gcn")
SEARCH = ("greedy", "adaptive", "beam")

#: Every planning strategy.
STRATEGIES = (DIRECT,) + RETRIEVAL + SEARCH

STEP1_CANDIDATES = ("all_nodes", "top_m_by_embedding")


@dataclass(frozen=True)
class SearchConfig:
    """Settings of the LLM-scored graph search.

    :param strategy: ``greedy``, ``adaptive`` or ``beam``, defaults to
        "greedy"
    :type strategy: str, optional
    :param threshold: Minimum score kept by ``adaptive``, defaults to 3
    :type threshold: int, optional
    :param beam_width: Paths kept by ``beam``, defaults to 2
    :type beam_width: int, optional
    :param step1_candidates: ``all_nodes`` or ``top_m_by_embedding``,
        defaults to "all_nodes"
    :type step1_candidates: str, optional
    :param m: Step-1 candidates kept when capping, defaults to 20
    :type m: int, optional
    :param max_paths: Frontier size limit of ``adaptive``, defaults to 64
    :type max_paths: int, optional
    """

    strategy: str = "greedy"
    threshold: int = 3
    beam_width: int = 2
    step1_candidates: str = "all_nodes"
    m: int = 20
    max_paths: int = 64

    def __post_init__(self):
        if self.strategy not in SEARCH:
            raise ConfigError(f"Unknown search strategy {self.strategy!r}.")
        if not 1 <= self.threshold <= 5:
            raise ConfigError("threshold must be in [1, 5].")
        if self.beam_width < 1 or self.m < 1 or self.max_paths < 1:
            raise ConfigError("beam_width, m and max_paths must be at least 1.")
        if self.step1_candidates not in STEP1_CANDIDATES:
            raise ConfigError(f"Unknown step-1 candidates {self.step1_candidates!r}.")


class Decomposition(NamedTuple):
    """Steps returned by the decomposition call."""

    steps: List[str]
    exchange: LlmExchange


def _example(render, example: Optional[PlanSample]) -> str:
    return render(example) if example is not None else ""


def plan_direct(
    request: str, graph: TaskGraph, client, example: PlanSample = None
) -> Plan:
    """Plan with a single direct inference call.

    :param request: The user request.
    :type request: str
    :param graph: The task graph.
    :type graph: TaskGraph
    :param client: The LLM client.
    :type client: LlmClient
    :param example: The in-context example, defaults to None
    :type example: PlanSample, optional
    :raises ServiceError: The LLM call failed.
    :return: The plan, flagged failed when the answer is unusable.
    :rtype: Plan
    """
    prompt = prompts.render(
        prompts.DIRECT_INFERENCE,
        {
            "task_list": prompts.render_graph_tasks(graph),
            "examples": _example(prompts.render_plan_example, example),
            "user_request": request,
        },
    )
    exchange = client.chat(prompt, purpose=prompts.DIRECT_INFERENCE)
    try:
        plan = parse_plan_json(exchange.response, graph)
    except ParseFailure as error:
        logger.warning("Direct inference answer is unusable: %s", error)
        return failed_plan([exchange], [FLAG_PARSE_FAILURE])
    return replace(plan, exchanges=(exchange,))


def decompose_steps(
    request: str, graph: TaskGraph, client, example: PlanSample = None
) -> Decomposition:
    """Break a request into steps with one call.

    :param request: The user request.
    :type request: str
    :param graph: The task graph.
    :type graph: TaskGraph
    :param client: The LLM client.
    :type client: LlmClient
    :param example: The in-context example, defaults to None
    :type example: PlanSample, optional
    :raises ParseFailure: The answer holds no step list.
    :raises EmptyDecomposition: The step list is empty.
    :return: The steps and the exchange.
    :rtype: Decomposition
    """
    prompt = prompts.render(
        prompts.STEPS_ONLY,
        {
            "task_list": prompts.render_graph_tasks(graph),
            "examples": _example(prompts.render_steps_example, example),
            "user_request": request,
        },
    )
    exchange = client.chat(prompt, purpose=prompts.STEPS_ONLY)
    try:
        steps = parse_steps(exchange.response)
    except ParseFailure as error:
        raise ParseFailure(str(error), exchange) from error
    if not steps:
        raise EmptyDecomposition("The decomposition returned no steps.", exchange)
    return Decomposition(steps, exchange)


def _argmax(scores: np.ndarray) -> int:
    # np.argmax returns the first maximum, so ties go to the smallest id.
    return int(np.argmax(scores))


def retrieve_path(
    steps: Sequence[str], graph: TaskGraph, h: np.ndarray, step_embedder
) -> Plan:
    """Decode a path on the graph, one task per step.

    The first task is the best scoring node overall, every next task the
    best scoring out-neighbor of the previous one. A node without
    out-neighbors falls back to the best node overall; that step is
    flagged and the broken pair is not linked.

    :param steps: The step texts, non-empty.
    :type steps: Sequence[str]
    :param graph: The task graph.
    :type graph: TaskGraph
    :param h: Final node embeddings, one row per node.
    :type h: np.ndarray
    :param step_embedder: Provider of step embeddings.
    :type step_embedder: EmbeddingProvider
    :return: The plan, hallucination-free.
    :rtype: Plan
    """
    x = step_embedder.embed_texts(list(steps))
    scores = x @ h.T
    chosen = [_argmax(scores[0])]
    links, flags = [], []
    for index in range(1, len(steps)):
        previous = chosen[-1]
        neighbors = graph.neighbors(previous)
        if neighbors:
            node = neighbors[_argmax(scores[index, neighbors])]
            links.append((graph.name_of(previous), graph.name_of(node)))
        else:
            node = _argmax(scores[index])
            flags.append(f"{FLAG_DEAD_END}:step={index}")
            logger.warning(
                "Task %s has no successor, step %s falls back", previous, index
            )
        chosen.append(node)
    return Plan(
        steps=tuple(steps),
        nodes=tuple(graph.name_of(node) for node in chosen),
        links=tuple(links),
        flags=tuple(flags),
    )


class SearchPath(NamedTuple):
    """A partial path of the graph search."""

    nodes: Tuple[int, ...]
    score: int

    @property
    def rank(self):
        """Sort key: higher cumulative score first, then node ids."""
        return (-self.score, self.nodes)


@dataclass
class _Assessment:
    path: SearchPath
    candidates: List[int]
    scores: List[int]
    exchange: Optional[LlmExchange]
    failed: bool = False


def _step1_candidates(graph, cfg, step, h, step_embedder) -> List[int]:
    if cfg.step1_candidates == "all_nodes":
        return list(range(len(graph)))
    if h is None or step_embedder is None:
        raise ConfigError("Capping step-1 candidates needs node and step embeddings.")
    scores = h @ step_embedder.embed_one(step)
    order = np.lexsort((np.arange(len(graph)), -scores))
    return sorted(int(node) for node in order[: cfg.m])


def _assess(graph, client, step, path, candidates, example) -> _Assessment:
    prompt = prompts.render(
        prompts.TASK_ASSESSMENT,
        {
            "candidate_tasks": prompts.render_graph_tasks(graph, candidates),
            "examples": _example(prompts.render_assessment_example, example),
            "step_description": step,
        },
    )
    exchange = client.chat(prompt, purpose=prompts.TASK_ASSESSMENT)
    names = [graph.name_of(node) for node in candidates]
    try:
        scores = parse_score_dict(exchange.response, names)
    except ParseFailure as error:
        logger.warning("Assessment answer is unusable, scoring 1: %s", error)
        return _Assessment(
            path, candidates, [1] * len(candidates), exchange, failed=True
        )
    return _Assessment(path, candidates, [scores[name] for name in names], exchange)


def _expand(assessment: _Assessment, cfg: SearchConfig) -> List[SearchPath]:
    children = [
        SearchPath(assessment.path.nodes + (node,), assessment.path.score + score)
        for node, score in zip(assessment.candidates, assessment.scores)
    ]
    children.sort(
        key=lambda child: (-(child.score - assessment.path.score), child.nodes[-1])
    )
    if cfg.strategy == "greedy":
        return children[:1]
    if cfg.strategy == "adaptive":
        gain = assessment.path.score
        kept = [child for child in children if child.score - gain >= cfg.threshold]
        return kept or children[:1]
    return children


def _select(
    graph, client, request, steps, paths, flags
) -> Tuple[SearchPath, LlmExchange]:
    solutions = [[graph.name_of(node) for node in path.nodes] for path in paths]
    prompt = prompts.render(
        prompts.PATH_SELECTION,
        {
            "task_list": json.dumps(graph.names, ensure_ascii=False),
            "user_request": request,
            "steps": json.dumps(list(steps), ensure_ascii=False),
            "solutions": "\n".join(
                json.dumps(item, ensure_ascii=False) for item in solutions
            ),
        },
    )
    exchange = client.chat(prompt, purpose=prompts.PATH_SELECTION)
    try:
        selected = parse_selection(exchange.response)
    except ParseFailure as error:
        logger.warning("Path selection answer is unusable: %s", error)
        flags.append(FLAG_PARSE_FAILURE)
        return paths[0], exchange
    for path, names in zip(paths, solutions):
        if names == selected:
            return path, exchange
    logger.warning("Path selection named no searched path: %s", selected)
    flags.append(FLAG_INVALID_SELECTION)
    return paths[0], exchange


def graph_search(
    steps: Sequence[str],
    graph: TaskGraph,
    client,
    cfg: SearchConfig,
    request: str = "",
    h: np.ndarray = None,
    step_embedder=None,
    example: PlanSample = None,
    executor: Executor = None,
) -> Plan:
    """Walk the graph one step at a time with LLM-scored candidates.

    At each depth every frontier path asks the LLM to score its
    candidates: any node at the first depth (or the ``m`` best by
    embedding), the out-neighbors of its last node afterwards. Paths
    without candidates stay as they are. ``greedy`` keeps the best
    child, ``adaptive`` the children scoring at least the threshold and
    ``beam`` the ``beam_width`` best paths overall by cumulative score.
    When several paths survive, one more call selects the winner.

    :param steps: The step texts, non-empty.
    :type steps: Sequence[str]
    :param graph: The task graph.
    :type graph: TaskGraph
    :param client: The LLM client.
    :type client: LlmClient
    :param cfg: The search settings.
    :type cfg: SearchConfig
    :param request: The user request, defaults to ""
    :type request: str, optional
    :param h: Node embeddings for step-1 capping, defaults to None
    :type h: np.ndarray, optional
    :param step_embedder: Step embeddings for step-1 capping, defaults
        to None
    :type step_embedder: EmbeddingProvider, optional
    :param example: The in-context example, defaults to None
    :type example: PlanSample, optional
    :param executor: Runs the assessments of one depth concurrently,
        defaults to None
    :type executor: Executor, optional
    :raises ServiceError: An LLM call failed.
    :return: The plan.
    :rtype: Plan
    """
    # pylint: disable=too-many-arguments, too-many-locals
    frontier = [SearchPath((), 0)]
    exchanges, flags = [], []
    for depth, step in enumerate(steps):
        jobs, kept = [], []
        for path in frontier:
            if path.nodes:
                candidates = graph.neighbors(path.nodes[-1])
            else:
                candidates = _step1_candidates(graph, cfg, step, h, step_embedder)
            if candidates:
                jobs.append((path, candidates))
            else:
                kept.append(path)
                flags.append(f"{FLAG_DEAD_END}:step={depth}")

        def run(job, step=step):
            return _assess(graph, client, step, job[0], job[1], example)

        if executor:
            assessments = list(executor.map(run, jobs))
        else:
            assessments = [run(job) for job in jobs]
        children = []
        for assessment in assessments:
            exchanges.append(assessment.exchange)
            if assessment.failed:
                flags.append(FLAG_PARSE_FAILURE)
            children.extend(_expand(assessment, cfg))

        children.sort(key=lambda child: child.rank)
        limit = cfg.beam_width if cfg.strategy == "beam" else cfg.max_paths
        frontier = sorted(kept + children[:limit], key=lambda path: path.rank)
        if cfg.strategy == "beam":
            frontier = frontier[: cfg.beam_width]

    winner = frontier[0]
    if len(frontier) > 1:
        winner, exchange = _select(graph, client, request, steps, frontier, flags)
        exchanges.append(exchange)

    names = tuple(graph.name_of(node) for node in winner.nodes)
    return Plan(
        steps=tuple(steps),
        nodes=names,
        links=tuple(zip(names, names[1:])),
        exchanges=tuple(exchanges),
        flags=tuple(dict.fromkeys(flags)),
    )


def fill_parameters(
    request: str, plan: Plan, graph: TaskGraph, client, example: PlanSample = None
) -> Plan:
    """Ask the LLM for the invocation arguments of the planned tasks.

    Arguments attach positionally when the answer lists as many tasks as
    the plan. Otherwise the plan is flagged and arguments are matched by
    task name, tasks without an answer getting none.

    :param request: The user request.
    :type request: str
    :param plan: A hallucination-free plan with nodes.
    :type plan: Plan
    :param graph: The task graph.
    :type graph: TaskGraph
    :param client: The LLM client.
    :type client: LlmClient
    :param example: The in-context example, defaults to None
    :type example: PlanSample, optional
    :raises ServiceError: The LLM call failed.
    :return: The plan with arguments, or flagged without them.
    :rtype: Plan
    """
    prompt = prompts.render(
        prompts.PARAMETER_FILL,
        {
            "user_request": request,
            "planned_tasks": json.dumps(list(plan.nodes), ensure_ascii=False),
            "task_details": prompts.render_task_details(graph, plan.nodes),
            "examples": _example(prompts.render_parameter_example, example),
        },
    )
    exchange = client.chat(prompt, purpose=prompts.PARAMETER_FILL)
    exchanges = plan.exchanges + (exchange,)
    try:
        answered = parse_arguments(exchange.response)
    except ParseFailure as error:
        logger.warning("Parameter answer is unusable: %s", error)
        return replace(
            plan, exchanges=exchanges, flags=plan.flags + (FLAG_PARSE_FAILURE,)
        )

    if len(answered) == len(plan.nodes):
        arguments = tuple(values for _, values in answered)
        return replace(plan, arguments=arguments, exchanges=exchanges)

    logger.warning(
        "Parameter answer lists %s tasks for %s", len(answered), len(plan.nodes)
    )
    remaining = list(answered)
    arguments = []
    for name in plan.nodes:
        match = next((item for item in remaining if item[0] == name), None)
        if match is None:
            arguments.append(())
        else:
            remaining.remove(match)
            arguments.append(match[1])
    return replace(
        plan,
        arguments=tuple(arguments),
        exchanges=exchanges,
        flags=plan.flags + (FLAG_ALIGNMENT_WARNING,),
    )


@dataclass
class PlanningContext:
    """Everything a strategy needs to plan a request.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param client: The LLM client.
    :type client: LlmClient
    :param step_embedder: Provider of step embeddings, defaults to None
    :type step_embedder: EmbeddingProvider, optional
    :param node_embeddings: Final node embeddings of the scorer,
        defaults to None
    :type node_embeddings: np.ndarray, optional
    :param search: Graph search settings, defaults to
        :class:`SearchConfig`
    :type search: SearchConfig, optional
    :param example: The in-context example, defaults to None
    :type example: PlanSample, optional
    :param fill: Fill invocation arguments, defaults to False
    :type fill: bool, optional
    :param executor: Pool for concurrent assessments, defaults to None
    :type executor: Executor, optional
    """

    # pylint: disable=too-many-instance-attributes
    graph: TaskGraph
    client: object
    step_embedder: object = None
    node_embeddings: Optional[np.ndarray] = None
    search: SearchConfig = SearchConfig()
    example: Optional[PlanSample] = None
    fill: bool = False
    executor: Optional[Executor] = None

    def decompose(self, request: str):
        """Decompose a request, turning unusable answers into a failed
        plan.

        :return: The decomposition, or a failed plan.
        :rtype: Union[Decomposition, Plan]
        """
        try:
            return decompose_steps(request, self.graph, self.client, self.example)
        except EmptyDecomposition as error:
            logger.warning("Request decomposed into no steps")
            return failed_plan([error.exchange], [FLAG_EMPTY_DECOMPOSITION])
        except ParseFailure as error:
            logger.warning("Decomposition answer is unusable: %s", error)
            return failed_plan([error.exchange], [FLAG_PARSE_FAILURE])


def plan_request(request: str, strategy: str, ctx: PlanningContext) -> Plan:
    """Plan a request with a strategy.

    :param request: The user request.
    :type request: str
    :param strategy: One of :data:`STRATEGIES`.
    :type strategy: str
    :param ctx: The planning context.
    :type ctx: PlanningContext
    :raises ConfigError: The strategy is unknown or misses its inputs.
    :raises ServiceError: An LLM call failed.
    :return: The plan.
    :rtype: Plan
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"Unknown strategy {strategy!r}.")
    if strategy == DIRECT:
        plan = plan_direct(request, ctx.graph, ctx.client, ctx.example)
    else:
        decomposition = ctx.decompose(request)
        if isinstance(decomposition, Plan):
            return decomposition
        if strategy in RETRIEVAL:
            if ctx.node_embeddings is None or ctx.step_embedder is None:
                raise ConfigError(
                    f"Strategy {strategy!r} needs node and step embeddings."
                )
            plan = retrieve_path(
                decomposition.steps, ctx.graph, ctx.node_embeddings, ctx.step_embedder
            )
            plan = replace(plan, exchanges=(decomposition.exchange,))
        else:
            plan = graph_search(
                decomposition.steps,
                ctx.graph,
                ctx.client,
                replace(ctx.search, strategy=strategy),
                request=request,
                h=ctx.node_embeddings,
                step_embedder=ctx.step_embedder,
                example=ctx.example,
                executor=ctx.executor,
            )
            plan = replace(plan, exchanges=(decomposition.exchange,) + plan.exchanges)
    if ctx.fill and not plan.failed and plan.nodes and not plan.hallucinated_nodes:
        plan = fill_parameters(request, plan, ctx.graph, ctx.client, ctx.example)
    return plan
