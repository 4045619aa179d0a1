"""This module defines the parsers of LLM responses. LLMs wrap their JSON
unpredictably, so every parser first extracts the first balanced JSON
object of the response, tolerating prose around it and code fences.

Parsers are total: any string either yields a value or raises
:class:`ParseFailure`, which callers turn into a flagged result.
"""
import json
import math
import re
from numbers import Real
from typing import Dict, List, Sequence, Tuple

from src.errors import ParseFailure
from src.models.graph import TaskGraph, canonical_name
from src.models.plan import Argument, Plan

FENCE = re.compile(r"```[A-Za-z0-9_-]*")
TRAILING_COMMA = re.compile(r",\s*([}\]])")

#: Score range of the assessment prompt.
MIN_SCORE, MAX_SCORE = 1, 5


def _balanced_end(text: str, start: int) -> int:
    depth = 0
    in_string = False
    escaped = False
    for position in range(start, len(text)):
        char = text[position]
        if in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
        elif char == '"':
            in_string = True
        elif char == "{":
            depth += 1
        elif char == "}":
            depth -= 1
            if depth == 0:
                return position
    return -1


def _loads(candidate: str):
    try:
        return json.loads(candidate)
    except ValueError:
        return json.loads(TRAILING_COMMA.sub(r"\1", candidate))


def extract_json_object(text: str) -> dict:
    """The first balanced JSON object of a response.

    :param text: The response text.
    :type text: str
    :raises ParseFailure: No JSON object can be decoded.
    :return: The decoded object.
    :rtype: dict
    """
    if not isinstance(text, str):
        raise ParseFailure("Response is not text.")
    text = FENCE.sub("", text)
    start = text.find("{")
    while start != -1:
        end = _balanced_end(text, start)
        if end == -1:
            break
        try:
            value = _loads(text[start : end + 1])
        except (ValueError, RecursionError):
            value = None
        if isinstance(value, dict):
            return value
        start = text.find("{", start + 1)
    raise ParseFailure("Response holds no JSON object.")


def _name(item) -> str:
    if isinstance(item, dict):
        item = item.get("task", item.get("name"))
    if not isinstance(item, str) or not canonical_name(item):
        raise ParseFailure(f"Invalid task entry {item!r}.")
    return canonical_name(item)


def _arguments(item) -> Tuple[Argument, ...]:
    if not isinstance(item, dict):
        return ()
    raw = item.get("arguments", [])
    if raw is None:
        return ()
    if isinstance(raw, dict):
        raw = [{"name": key, "value": value} for key, value in raw.items()]
    elif not isinstance(raw, list):
        raw = [raw]
    return tuple(Argument.from_record(value) for value in raw)


def _links(raw) -> List[Tuple[str, str]]:
    links = []
    for item in raw or []:
        if isinstance(item, dict):
            links.append((_name(item.get("source")), _name(item.get("target"))))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            links.append((_name(item[0]), _name(item[1])))
        else:
            raise ParseFailure(f"Invalid link entry {item!r}.")
    return links


def _steps(raw) -> List[str]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ParseFailure("task_steps is not a list.")
    return [str(item) for item in raw]


def parse_plan_json(response: str, graph: TaskGraph) -> Plan:
    """Read a plan from a direct inference response. Hallucinated nodes
    and links are kept and listed.

    :param response: The response text.
    :type response: str
    :param graph: The task graph.
    :type graph: TaskGraph
    :raises ParseFailure: The response holds no usable plan.
    :return: The plan, without exchanges.
    :rtype: Plan
    """
    try:
        record = extract_json_object(response)
        raw_nodes = record.get("task_nodes", [])
        if not isinstance(raw_nodes, list):
            raise ParseFailure("task_nodes is not a list.")
        nodes = [_name(item) for item in raw_nodes]
        arguments = None
        if any(isinstance(item, dict) and "arguments" in item for item in raw_nodes):
            arguments = tuple(_arguments(item) for item in raw_nodes)
        links = _links(record.get("task_links", []))
        steps = _steps(record.get("task_steps", []))
    except ParseFailure:
        raise
    except (ValueError, TypeError, AttributeError, RecursionError) as error:
        raise ParseFailure(f"Unusable plan: {error}") from error

    hallucinated_nodes = list(
        dict.fromkeys(name for name in nodes if not graph.contains_node(name))
    )
    hallucinated_links = list(
        dict.fromkeys(link for link in links if not graph.contains_edge(*link))
    )
    return Plan(
        steps=tuple(steps),
        nodes=tuple(nodes),
        links=tuple(links),
        arguments=arguments,
        hallucinated_nodes=tuple(hallucinated_nodes),
        hallucinated_links=tuple(hallucinated_links),
    )


def parse_steps(response: str) -> List[str]:
    """Read ``task_steps`` from a decomposition response.

    :raises ParseFailure: The response holds no step list.
    :return: The steps, possibly empty.
    :rtype: List[str]
    """
    record = extract_json_object(response)
    if "task_steps" not in record:
        raise ParseFailure("Response has no task_steps.")
    return [step for step in _steps(record["task_steps"]) if step.strip()]


def round_half_up(value: float) -> int:
    """Round to the nearest integer, halves away from minus infinity."""
    return int(math.floor(value + 0.5))


def _score(value) -> int:
    if isinstance(value, bool):
        return MIN_SCORE
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            return MIN_SCORE
    if not isinstance(value, Real) or not math.isfinite(value):
        return MIN_SCORE
    return min(MAX_SCORE, max(MIN_SCORE, round_half_up(float(value))))


def parse_score_dict(response: str, candidates: Sequence[str]) -> Dict[str, int]:
    """Read an assessment score dictionary. Missing candidates score 1,
    scores are clamped to ``[1, 5]`` and rounded half-up.

    :param response: The response text.
    :type response: str
    :param candidates: The candidate task names.
    :type candidates: Sequence[str]
    :raises ParseFailure: The response holds no JSON object.
    :return: One score per candidate.
    :rtype: Dict[str, int]
    """
    record = extract_json_object(response)
    scores = {canonical_name(key): value for key, value in record.items()}
    assessed = {}
    for name in candidates:
        key = canonical_name(name)
        assessed[name] = _score(scores[key]) if key in scores else 1
    return assessed


def parse_selection(response: str) -> List[str]:
    """Read the ``best_solution`` list of a path selection response.

    :raises ParseFailure: The list is missing or malformed.
    :return: The selected task names.
    :rtype: List[str]
    """
    record = extract_json_object(response)
    solution = record.get("best_solution")
    if not isinstance(solution, list):
        raise ParseFailure("Response has no best_solution list.")
    try:
        return [_name(item) for item in solution]
    except (TypeError, AttributeError) as error:
        raise ParseFailure(str(error)) from error


def parse_arguments(response: str) -> List[Tuple[str, Tuple[Argument, ...]]]:
    """Read ``task_nodes`` arguments of a parameter filling response.

    :raises ParseFailure: The response holds no task node list.
    :return: ``(task name, arguments)`` in response order.
    :rtype: List[Tuple[str, Tuple[Argument, ...]]]
    """
    record = extract_json_object(response)
    raw_nodes = record.get("task_nodes")
    if not isinstance(raw_nodes, list):
        raise ParseFailure("Response has no task_nodes list.")
    try:
        return [(_name(item), _arguments(item)) for item in raw_nodes]
    except (TypeError, AttributeError, ValueError) as error:
        raise ParseFailure(str(error)) from error


def parse_path_answer(response: str) -> Tuple[int, ...]:
    """Read the node path of a graph problem answer.

    :raises ParseFailure: The answer holds no integer path.
    :return: The node ids.
    :rtype: Tuple[int, ...]
    """
    record = extract_json_object(response)
    path = record.get("path")
    if not isinstance(path, list):
        raise ParseFailure("Answer has no path list.")
    try:
        return tuple(int(item) for item in path)
    except (TypeError, ValueError) as error:
        raise ParseFailure(f"Path holds a non-integer node: {error}") from error
