"""This module ingests planning datasets: samples, train/test splits,
in-context example selection and BPR training triplets.

Samples are validated rather than silently fixed. Problems are recorded
as flags on the sample (see the ``FLAG_*`` constants of
:mod:`src.models.plan`) and logged as warnings.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.errors import EmbeddingShapeMismatch, InsufficientSamples, SchemaError
from src.models.graph import LinkKind, TaskGraph, canonical_name
from src.models.plan import (
    FLAG_ALIGNMENT_ERROR,
    FLAG_CYCLIC_LINKS,
    FLAG_REALIGNED,
    FLAG_UNKNOWN_NODE,
    Argument,
    PlanSample,
)
from src.services.embedding import cosine_matrix
from src.services.storage import read_jsonl

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("request", "task_steps", "task_nodes", "task_links")


@dataclass(frozen=True)
class TrainTriplet:
    """A ``<step, positive task, negative task>`` training example."""

    step_text: str
    positive: int
    negative: int

    def __post_init__(self):
        if self.positive == self.negative:
            raise SchemaError("A triplet's negative must differ from its positive.")


@dataclass(frozen=True)
class Split:
    """Disjoint train and test samples."""

    train: Tuple[PlanSample, ...]
    test: Tuple[PlanSample, ...]
    seed: int


@dataclass(frozen=True)
class DatasetProfile:
    """Preset of a benchmark dataset.

    :param name: The dataset name.
    :type name: str
    :param link_kind: Kind of untyped links.
    :type link_kind: LinkKind
    :param train_n: Training samples, None when there is no train split.
    :type train_n: int, optional
    :param test_n: Test samples, None for every remaining eligible one.
    :type test_n: int, optional
    :param cap_step1: Whether step-1 candidates should be capped.
    :type cap_step1: bool
    """

    name: str
    link_kind: LinkKind
    train_n: Optional[int]
    test_n: Optional[int]
    cap_step1: bool = False

    @property
    def holdout_only(self) -> bool:
        """Every eligible sample but the example is a test sample."""
        return self.train_n is None


PROFILES: Dict[str, DatasetProfile] = {
    "huggingface": DatasetProfile("huggingface", LinkKind.RESOURCE, 3000, 500),
    "multimedia": DatasetProfile("multimedia", LinkKind.RESOURCE, 3000, 500),
    "dailylife": DatasetProfile("dailylife", LinkKind.TEMPORAL, 3000, 500),
    "tmdb": DatasetProfile("tmdb", LinkKind.RESOURCE, None, None),
    "ultratool": DatasetProfile(
        "ultratool", LinkKind.RESOURCE, 3000, 500, cap_step1=True
    ),
}


def dataset_profile(name: str) -> DatasetProfile:
    """The preset of a named dataset.

    :param name: One of :data:`PROFILES`.
    :type name: str
    :raises SchemaError: The dataset is unknown.
    :return: The profile.
    :rtype: DatasetProfile
    """
    try:
        return PROFILES[name.lower()]
    except KeyError as error:
        raise SchemaError(f"Unknown dataset profile {name!r}.") from error


def _node_name(item) -> str:
    if isinstance(item, dict):
        item = item["task"]
    if not isinstance(item, str):
        raise SchemaError(f"Invalid task node {item!r}.")
    return canonical_name(item)


def _node_arguments(raw_nodes) -> Optional[Tuple[Tuple[Argument, ...], ...]]:
    if not any(isinstance(item, dict) and "arguments" in item for item in raw_nodes):
        return None
    arguments = []
    for item in raw_nodes:
        values = item.get("arguments") if isinstance(item, dict) else None
        if isinstance(values, dict):
            values = [{"name": key, "value": value} for key, value in values.items()]
        arguments.append(tuple(Argument.from_record(value) for value in values or []))
    return tuple(arguments)


def _realign(nodes, links) -> Tuple[List[int], Optional[str]]:
    """Positions of the nodes in a topological order of the links.

    :return: The order and the flag describing what happened, if any.
    """
    first = {}
    for position, name in enumerate(nodes):
        first.setdefault(name, position)
    pairs = [
        (first[source], first[target])
        for source, target in links
        if source in first and target in first
    ]
    stated = list(range(len(nodes)))
    if all(source < target for source, target in pairs):
        return stated, None
    digraph = nx.DiGraph()
    digraph.add_nodes_from(stated)
    digraph.add_edges_from(pairs)
    try:
        return list(nx.lexicographical_topological_sort(digraph)), FLAG_REALIGNED
    except nx.NetworkXUnfeasible:
        return stated, FLAG_CYCLIC_LINKS


def sample_from_record(
    record: dict, graph: TaskGraph, default_id: str = ""
) -> PlanSample:
    """Validate a dataset record.

    :param record: The decoded record.
    :type record: dict
    :param graph: The task graph.
    :type graph: TaskGraph
    :param default_id: Id used when the record has none, defaults to ""
    :type default_id: str, optional
    :raises SchemaError: A required field is missing or malformed.
    :return: The sample with its validation flags.
    :rtype: PlanSample
    """
    # pylint: disable=too-many-locals
    if not isinstance(record, dict):
        raise SchemaError("A sample record must be an object.")
    missing = [name for name in REQUIRED_FIELDS if name not in record]
    if missing:
        raise SchemaError(f"Sample {record.get('id', default_id)!r} misses {missing}.")
    sample_id = str(record.get("id", default_id))
    try:
        steps = [str(step) for step in record["task_steps"] or []]
        raw_nodes = list(record["task_nodes"] or [])
        nodes = [_node_name(item) for item in raw_nodes]
        arguments = _node_arguments(raw_nodes)
        links = [
            (canonical_name(item["source"]), canonical_name(item["target"]))
            for item in record["task_links"] or []
        ]
    except (KeyError, TypeError, AttributeError) as error:
        raise SchemaError(f"Sample {sample_id!r} is malformed: {error}") from error

    flags = []
    if steps and len(steps) != len(nodes):
        flags.append(FLAG_ALIGNMENT_ERROR)
        logger.warning(
            "Sample %s has %s steps for %s nodes", sample_id, len(steps), len(nodes)
        )
    unknown = [name for name in nodes if not graph.contains_node(name)]
    if unknown:
        flags.append(FLAG_UNKNOWN_NODE)
        logger.warning("Sample %s names unknown tasks %s", sample_id, unknown)
    order, flag = _realign(nodes, links)
    if flag:
        flags.append(flag)
        logger.warning(
            "Sample %s links disagree with the node order: %s", sample_id, flag
        )
    nodes = [nodes[position] for position in order]
    if arguments is not None:
        arguments = tuple(arguments[position] for position in order)

    return PlanSample(
        id=sample_id,
        request=str(record["request"]),
        steps=tuple(steps),
        gt_nodes=tuple(nodes),
        gt_links=tuple(links),
        arguments=arguments,
        flags=tuple(flags),
    )


def load_samples(path: str, graph: TaskGraph) -> List[PlanSample]:
    """Load and validate a JSONL samples file.

    :param path: The samples file.
    :type path: str
    :param graph: The task graph.
    :type graph: TaskGraph
    :raises ParseError: A line is not valid JSON.
    :raises SchemaError: A record is malformed or an id repeats.
    :return: The samples in file order.
    :rtype: List[PlanSample]
    """
    samples = []
    seen = set()
    for position, record in enumerate(read_jsonl(path)):
        sample = sample_from_record(record, graph, default_id=str(position))
        if sample.id in seen:
            raise SchemaError(f"Sample id {sample.id!r} repeats.")
        seen.add(sample.id)
        samples.append(sample)
    flagged = sum(1 for sample in samples if sample.flags)
    logger.info("Loaded %s samples from %s, %s flagged", len(samples), path, flagged)
    return samples


def eligible_samples(
    samples: Iterable[PlanSample], exclude: Iterable[str] = ()
) -> List[PlanSample]:
    """Samples whose invocation path has at least two tasks."""
    excluded = set(exclude)
    return [
        sample
        for sample in samples
        if sample.eligible and sample.id not in excluded
    ]


def make_split(
    samples: Sequence[PlanSample],
    train_n: int,
    test_n: int,
    seed: int,
    exclude: Iterable[str] = (),
) -> Split:
    """A seeded, disjoint split of the eligible samples.

    :param samples: The samples.
    :type samples: Sequence[PlanSample]
    :param train_n: Training samples.
    :type train_n: int
    :param test_n: Test samples.
    :type test_n: int
    :param seed: Shuffle seed.
    :type seed: int
    :param exclude: Sample ids to leave out, defaults to ()
    :type exclude: Iterable[str], optional
    :raises InsufficientSamples: Fewer eligible samples than requested.
    :return: The split.
    :rtype: Split
    """
    eligible = eligible_samples(samples, exclude)
    if train_n < 0 or test_n < 0 or train_n + test_n > len(eligible):
        raise InsufficientSamples(
            f"Requested {train_n} + {test_n} samples, {len(eligible)} are eligible."
        )
    order = np.random.default_rng(seed).permutation(len(eligible))
    train = tuple(eligible[index] for index in order[:train_n])
    test = tuple(eligible[index] for index in order[train_n : train_n + test_n])
    return Split(train, test, seed)


def select_example(samples: Sequence[PlanSample], seed: int) -> PlanSample:
    """Choose the in-context example of the 1-shot prompts among the
    eligible, aligned and unflagged samples.

    :raises InsufficientSamples: No sample qualifies.
    :return: The example sample.
    :rtype: PlanSample
    """
    candidates = [
        sample
        for sample in eligible_samples(samples)
        if sample.aligned and not sample.flags
    ]
    if not candidates:
        raise InsufficientSamples("No sample qualifies as the in-context example.")
    return candidates[int(np.random.default_rng(seed).integers(len(candidates)))]


def make_holdout_split(samples: Sequence[PlanSample], seed: int, example=None) -> Split:
    """Every eligible sample except the in-context example is a test
    sample; there is no training split.

    :param samples: The samples.
    :type samples: Sequence[PlanSample]
    :param seed: Seed of the example choice.
    :type seed: int
    :param example: The example, defaults to :func:`select_example`
    :type example: PlanSample, optional
    :return: The split.
    :rtype: Split
    """
    example = example or select_example(samples, seed)
    return Split((), tuple(eligible_samples(samples, exclude=[example.id])), seed)


def make_profile_split(
    profile: DatasetProfile,
    samples: Sequence[PlanSample],
    seed: int,
    train_n: Optional[int] = None,
    test_n: Optional[int] = None,
) -> Tuple[PlanSample, Split]:
    """The in-context example and the split a dataset profile asks for,
    with optional size overrides.

    :return: The example and the split excluding it.
    :rtype: Tuple[PlanSample, Split]
    """
    example = select_example(samples, seed)
    train_n = profile.train_n if train_n is None else train_n
    test_n = profile.test_n if test_n is None else test_n
    if train_n is None and test_n is None:
        return example, make_holdout_split(samples, seed, example)
    remaining = len(eligible_samples(samples, exclude=[example.id]))
    train_n = train_n or 0
    test_n = remaining - train_n if test_n is None else test_n
    return example, make_split(samples, train_n, test_n, seed, exclude=[example.id])


def build_triplets(
    train: Sequence[PlanSample],
    graph: TaskGraph,
    node_embeddings: np.ndarray,
    negatives_per_positive: int = 2,
) -> List[TrainTriplet]:
    """Pair each step with its task and the most similar other tasks,
    ranked by cosine of description embeddings, ties broken by node id.

    :param train: Training samples.
    :type train: Sequence[PlanSample]
    :param graph: The task graph.
    :type graph: TaskGraph
    :param node_embeddings: Description embeddings, one row per node.
    :type node_embeddings: np.ndarray
    :param negatives_per_positive: Negatives per pair, defaults to 2
    :type negatives_per_positive: int, optional
    :raises EmbeddingShapeMismatch: The row count differs from the node
        count.
    :return: The triplets, in sample and step order.
    :rtype: List[TrainTriplet]
    """
    node_embeddings = np.asarray(node_embeddings, dtype=np.float64)
    if node_embeddings.ndim != 2 or node_embeddings.shape[0] != len(graph):
        raise EmbeddingShapeMismatch(
            f"Expected {len(graph)} embedding rows, got shape {node_embeddings.shape}."
        )
    available = len(graph) - 1
    if available < negatives_per_positive:
        logger.warning(
            "Negative pool exhausted: %s negatives per positive requested, "
            "%s available",
            negatives_per_positive,
            available,
        )
    similarity = cosine_matrix(node_embeddings)
    ids = np.arange(len(graph))
    negatives = {}
    triplets = []
    for sample in train:
        if not sample.aligned:
            logger.warning("Skipping unaligned sample %s", sample.id)
            continue
        for step, name in zip(sample.steps, sample.gt_nodes):
            if not graph.contains_node(name):
                continue
            positive = graph.node_id(name)
            if positive not in negatives:
                order = np.lexsort((ids, -similarity[positive]))
                negatives[positive] = [int(node) for node in order if node != positive][
                    :negatives_per_positive
                ]
            triplets.extend(
                TrainTriplet(step, positive, node) for node in negatives[positive]
            )
    return triplets
