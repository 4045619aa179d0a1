"""This module defines plans and planning samples. Both share the dataset
record shape: the ordered task steps, the invoked task nodes with their
arguments and the dependency links between them. Plans additionally keep
their hallucinated entries, their LLM exchanges and quality flags.
"""
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

from src.models.exchange import LlmExchange

#: Steps and task nodes do not correspond one-to-one.
FLAG_ALIGNMENT_ERROR = "AlignmentError"

#: A ground truth task is not a node of the graph.
FLAG_UNKNOWN_NODE = "UnknownNode"

#: Task nodes were reordered to follow the links.
FLAG_REALIGNED = "Realigned"

#: The links contain a cycle, the stated order was kept.
FLAG_CYCLIC_LINKS = "CyclicLinks"

#: Retrieval reached a node without successors.
FLAG_DEAD_END = "DeadEnd"

#: The parameter answer did not list the planned tasks one-to-one.
FLAG_ALIGNMENT_WARNING = "AlignmentWarning"

#: The LLM response could not be parsed.
FLAG_PARSE_FAILURE = "ParseFailure"

#: The LLM returned no task steps.
FLAG_EMPTY_DECOMPOSITION = "EmptyDecomposition"

#: The path selection answer named no searched path.
FLAG_INVALID_SELECTION = "InvalidSelection"

Link = Tuple[str, str]


@dataclass(frozen=True)
class Argument:
    """An invocation argument. Datasets either list plain values or
    objects carrying a name and a type.
    """

    value: str
    name: Optional[str] = None
    type: Optional[str] = None

    @classmethod
    def from_record(cls, record: Any) -> "Argument":
        """Read an argument from its dataset shape.

        :param record: A plain value or a ``{"name", "value", "type"}``
            object.
        :type record: Any
        :return: The argument.
        :rtype: Argument
        """
        if isinstance(record, dict):
            value = record.get("value", "")
            return cls(
                value="" if value is None else str(value),
                name=record.get("name"),
                type=record.get("type"),
            )
        return cls(value=str(record))

    def to_record(self) -> Any:
        """The dataset shape, plain values stay plain."""
        if self.name is None and self.type is None:
            return self.value
        record = {"value": self.value}
        if self.name is not None:
            record["name"] = self.name
        if self.type is not None:
            record["type"] = self.type
        return record


Arguments = Tuple[Tuple[Argument, ...], ...]


def _task_nodes(nodes, arguments) -> List[dict]:
    records = []
    for position, name in enumerate(nodes):
        record = {"task": name}
        if arguments is not None:
            record["arguments"] = [item.to_record() for item in arguments[position]]
        records.append(record)
    return records


@dataclass(frozen=True)
class PlanSample:
    """A planning sample with its ground truth.

    :param id: The sample id.
    :type id: str
    :param request: The user request.
    :type request: str
    :param steps: Decomposed step texts, one per task node when present.
    :type steps: Tuple[str, ...]
    :param gt_nodes: Ground truth task names in invocation order.
    :type gt_nodes: Tuple[str, ...]
    :param gt_links: Ground truth ``(source, target)`` name pairs.
    :type gt_links: Tuple[Link, ...]
    :param arguments: Ground truth arguments per node, defaults to None
    :type arguments: Arguments, optional
    :param flags: Validation flags raised at load, defaults to ()
    :type flags: Tuple[str, ...], optional
    """

    # pylint: disable=invalid-name
    id: str
    request: str
    steps: Tuple[str, ...]
    gt_nodes: Tuple[str, ...]
    gt_links: Tuple[Link, ...]
    arguments: Optional[Arguments] = None
    flags: Tuple[str, ...] = ()

    @property
    def eligible(self) -> bool:
        """Whether the invocation path has at least two tasks."""
        return len(self.gt_nodes) >= 2

    @property
    def aligned(self) -> bool:
        """Whether the steps pair one-to-one with the task nodes."""
        return bool(self.steps) and len(self.steps) == len(self.gt_nodes)

    def to_record(self) -> dict:
        """The samples file shape."""
        return {
            "id": self.id,
            "request": self.request,
            "task_steps": list(self.steps),
            "task_nodes": _task_nodes(self.gt_nodes, self.arguments),
            "task_links": [
                {"source": source, "target": target} for source, target in self.gt_links
            ],
        }


@dataclass(frozen=True)
class Plan:
    """The output of a planning strategy.

    :param steps: The decomposed steps.
    :type steps: Tuple[str, ...]
    :param nodes: Task names in invocation order, hallucinated ones kept.
    :type nodes: Tuple[str, ...]
    :param links: ``(source, target)`` name pairs.
    :type links: Tuple[Link, ...]
    :param arguments: Arguments per node, defaults to None
    :type arguments: Arguments, optional
    :param hallucinated_nodes: Names absent from the graph.
    :type hallucinated_nodes: Tuple[str, ...]
    :param hallucinated_links: Links absent from the graph.
    :type hallucinated_links: Tuple[Link, ...]
    :param exchanges: The LLM exchanges that produced the plan.
    :type exchanges: Tuple[LlmExchange, ...]
    :param failed: The LLM output was unusable.
    :type failed: bool
    :param flags: Quality flags, see the ``FLAG_*`` constants.
    :type flags: Tuple[str, ...]
    """

    # pylint: disable=too-many-instance-attributes
    steps: Tuple[str, ...] = ()
    nodes: Tuple[str, ...] = ()
    links: Tuple[Link, ...] = ()
    arguments: Optional[Arguments] = None
    hallucinated_nodes: Tuple[str, ...] = ()
    hallucinated_links: Tuple[Link, ...] = ()
    exchanges: Tuple[LlmExchange, ...] = field(default=(), repr=False)
    failed: bool = False
    flags: Tuple[str, ...] = ()

    @property
    def token_usage(self) -> int:
        """Total tokens over every exchange."""
        return sum(exchange.usage.total for exchange in self.exchanges)

    def count_calls(self, purpose: str) -> int:
        """Number of exchanges rendered from a template.

        :param purpose: The template name.
        :type purpose: str
        :return: The exchange count.
        :rtype: int
        """
        return sum(1 for exchange in self.exchanges if exchange.purpose == purpose)

    def to_record(self) -> dict:
        """The dataset shape plus hallucination, token and status fields."""
        return {
            "task_steps": list(self.steps),
            "task_nodes": _task_nodes(self.nodes, self.arguments),
            "task_links": [
                {"source": source, "target": target} for source, target in self.links
            ],
            "hallucinated_nodes": list(self.hallucinated_nodes),
            "hallucinated_links": [list(link) for link in self.hallucinated_links],
            "token_usage": self.token_usage,
            "failed": self.failed,
            "flags": list(self.flags),
        }


def failed_plan(exchanges=(), flags=(), steps=()) -> Plan:
    """An empty plan marking unusable LLM output."""
    return Plan(
        steps=tuple(steps),
        exchanges=tuple(exchanges),
        failed=True,
        flags=tuple(flags),
    )
