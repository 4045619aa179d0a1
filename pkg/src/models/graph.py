"""This module defines the text-attributed task graph. Nodes are invocable
sub-tasks with a natural-language description, links are directed
dependencies between them. A :class:`TaskGraph` is immutable once loaded
and can be shared by concurrent readers.

Node ids are dense, 0-based and assigned in file order so that embedding
rows line up with node ids.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Tuple

from src.errors import (
    ERROR_DANGLING_EDGE,
    ERROR_DUPLICATE_NODE,
    ERROR_PERMUTATION,
    ERROR_UNKNOWN_NODE,
    DanglingEdge,
    DuplicateNode,
    InvalidPermutation,
    SchemaError,
    UnknownNode,
)
from src.services.storage import read_json, write_json

logger = logging.getLogger(__name__)


class LinkKind(str, Enum):
    """Dependency label of a link, dataset dependent."""

    RESOURCE = "resource"
    TEMPORAL = "temporal"
    CATEGORY = "category"


def canonical_name(name: str) -> str:
    """Trim a task name and collapse internal runs of whitespace. The
    comparison stays case-sensitive.

    :param name: A task name as written by a dataset or an LLM.
    :type name: str
    :return: The canonical name.
    :rtype: str
    """
    return " ".join(str(name).split())


@dataclass(frozen=True)
class TaskNode:
    """A sub-task of the graph.

    :param id: The node position in the graph.
    :type id: int
    :param name: The unique task name, e.g. ``Image-to-Text``.
    :type name: str
    :param description: The function text of the task.
    :type description: str
    """

    # pylint: disable=invalid-name
    id: int
    name: str
    description: str


@dataclass(frozen=True)
class TaskEdge:
    """A directed dependency ``source -> target`` between node ids."""

    source: int
    target: int
    kind: LinkKind = LinkKind.RESOURCE


@dataclass(frozen=True)
class TaskGraph:
    """A directed text-attributed task graph.

    :param nodes: The nodes, ``nodes[i].id == i``.
    :type nodes: Tuple[TaskNode, ...]
    :param edges: The links, unique per ``(source, target)``.
    :type edges: Tuple[TaskEdge, ...]
    """

    nodes: Tuple[TaskNode, ...]
    edges: Tuple[TaskEdge, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _successors: Tuple[Tuple[int, ...], ...] = field(
        init=False, repr=False, compare=False
    )
    _pairs: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for position, node in enumerate(self.nodes):
            if node.id != position:
                raise SchemaError(
                    f"Node {node.name!r} has id {node.id}, expected {position}."
                )
            if not node.name:
                raise SchemaError("Node names must be non-empty.")
            if node.name in index:
                raise DuplicateNode(ERROR_DUPLICATE_NODE.format(name=node.name))
            index[node.name] = position

        successors = [[] for _ in self.nodes]
        pairs = set()
        for edge in self.edges:
            for endpoint in (edge.source, edge.target):
                if not 0 <= endpoint < len(self.nodes):
                    message = ERROR_DANGLING_EDGE.format(
                        source=edge.source, target=edge.target
                    )
                    raise DanglingEdge(message)
            if (edge.source, edge.target) in pairs:
                raise SchemaError(f"Duplicate link {edge.source} -> {edge.target}.")
            pairs.add((edge.source, edge.target))
            successors[edge.source].append(edge.target)

        object.__setattr__(self, "index", index)
        object.__setattr__(
            self, "_successors", tuple(tuple(sorted(item)) for item in successors)
        )
        object.__setattr__(self, "_pairs", frozenset(pairs))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def names(self) -> List[str]:
        """Node names in id order."""
        return [node.name for node in self.nodes]

    def node_id(self, name: str) -> int:
        """Look up a node id by (canonicalized) name.

        :param name: The task name.
        :type name: str
        :raises UnknownNode: No node has this name.
        :return: The node id.
        :rtype: int
        """
        try:
            return self.index[canonical_name(name)]
        except KeyError as error:
            raise UnknownNode(f"Node {name!r} is not part of the graph.") from error

    def name_of(self, node: int) -> str:
        """The name of a node id."""
        self._check(node)
        return self.nodes[node].name

    def neighbors(self, node: int) -> List[int]:
        """Out-neighbors of a node, sorted by id.

        :param node: The node id.
        :type node: int
        :raises UnknownNode: The id is out of range.
        :return: The targets of the links leaving ``node``.
        :rtype: List[int]
        """
        self._check(node)
        return list(self._successors[node])

    def contains_node(self, name: str) -> bool:
        """Whether a task name exists after canonicalization."""
        return canonical_name(name) in self.index

    def contains_edge(self, source_name: str, target_name: str) -> bool:
        """Whether the directed link ``source -> target`` exists."""
        source = self.index.get(canonical_name(source_name))
        target = self.index.get(canonical_name(target_name))
        if source is None or target is None:
            return False
        return (source, target) in self._pairs

    def relabel(self, permutation: Sequence[int]) -> "TaskGraph":
        """Build the isomorphic graph where node ``i`` moves to position
        ``permutation[i]``. Names and descriptions travel with their node,
        links are remapped and keep their order.

        :param permutation: A bijection on ``0..|V|-1``.
        :type permutation: Sequence[int]
        :raises InvalidPermutation: The permutation is not a bijection.
        :return: The relabeled graph.
        :rtype: TaskGraph
        """
        count = len(self.nodes)
        if sorted(int(item) for item in permutation) != list(range(count)):
            raise InvalidPermutation(ERROR_PERMUTATION.format(n=count - 1))
        slots = [None] * count
        for old, new in enumerate(permutation):
            node = self.nodes[old]
            slots[int(new)] = TaskNode(int(new), node.name, node.description)
        edges = tuple(
            TaskEdge(
                int(permutation[edge.source]), int(permutation[edge.target]), edge.kind
            )
            for edge in self.edges
        )
        return TaskGraph(tuple(slots), edges)

    def to_record(self) -> dict:
        """The graph file shape."""
        return {
            "nodes": [
                {"name": node.name, "description": node.description}
                for node in self.nodes
            ],
            "links": [
                {
                    "source": self.nodes[edge.source].name,
                    "target": self.nodes[edge.target].name,
                    "type": edge.kind.value,
                }
                for edge in self.edges
            ],
        }

    def _check(self, node: int):
        if not 0 <= node < len(self.nodes):
            raise UnknownNode(ERROR_UNKNOWN_NODE.format(node=node))


def inverse_permutation(permutation: Sequence[int]) -> List[int]:
    """The inverse of a bijection on ``0..n-1``."""
    inverse = [0] * len(permutation)
    for old, new in enumerate(permutation):
        inverse[int(new)] = old
    return inverse


def graph_from_record(
    record: dict, default_kind: LinkKind = LinkKind.RESOURCE
) -> TaskGraph:
    """Build a validated graph from the graph file shape.

    :param record: The decoded graph file.
    :type record: dict
    :param default_kind: Link kind used when a link has no ``type``,
        defaults to :attr:`LinkKind.RESOURCE`
    :type default_kind: LinkKind, optional
    :raises SchemaError: A required field is missing.
    :raises DuplicateNode: Two nodes share a name.
    :raises DanglingEdge: A link names a missing node.
    :return: The task graph.
    :rtype: TaskGraph
    """
    try:
        raw_nodes = record["nodes"]
        raw_links = record.get("links", [])
        nodes = []
        seen = set()
        for position, item in enumerate(raw_nodes):
            name = canonical_name(item["name"])
            if name in seen:
                raise DuplicateNode(ERROR_DUPLICATE_NODE.format(name=name))
            seen.add(name)
            nodes.append(TaskNode(position, name, item.get("description", "")))
        index = {node.name: node.id for node in nodes}
        edges = []
        pairs = set()
        for item in raw_links:
            source_name = canonical_name(item["source"])
            target_name = canonical_name(item["target"])
            if source_name not in index or target_name not in index:
                raise DanglingEdge(
                    ERROR_DANGLING_EDGE.format(source=source_name, target=target_name)
                )
            pair = (index[source_name], index[target_name])
            if pair in pairs:
                logger.warning(
                    "Skipping duplicate link %s -> %s", source_name, target_name
                )
                continue
            pairs.add(pair)
            kind = LinkKind(item["type"]) if item.get("type") else default_kind
            edges.append(TaskEdge(pair[0], pair[1], kind))
    except (KeyError, TypeError) as error:
        raise SchemaError(f"Graph record is missing a field: {error}") from error
    except ValueError as error:
        raise SchemaError(str(error)) from error
    return TaskGraph(tuple(nodes), tuple(edges))


def load_graph(path: str, default_kind: LinkKind = LinkKind.RESOURCE) -> TaskGraph:
    """Load and validate a graph file.

    :param path: The graph JSON file.
    :type path: str
    :param default_kind: Link kind for untyped links, defaults to
        :attr:`LinkKind.RESOURCE`
    :type default_kind: LinkKind, optional
    :raises ParseError: The file is not valid JSON.
    :return: The task graph.
    :rtype: TaskGraph
    """
    record = read_json(path)
    if not isinstance(record, dict):
        raise SchemaError(f"{path!r} does not hold a graph object.")
    graph = graph_from_record(record, default_kind)
    logger.info(
        "Loaded graph %s with %s nodes and %s links",
        path,
        len(graph),
        len(graph.edges),
    )
    return graph


def save_graph(graph: TaskGraph, path: str):
    """Write a graph in the format read by :func:`load_graph`."""
    write_json(path, graph.to_record())
