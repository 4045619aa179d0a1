"""This module defines the prompt catalogue. Templates are Jinja text
assets bundled under :file:`templates/prompts`, rendered in a single pass
with a strict environment: every slot must be provided, no slot may be
invented, and values are inserted literally without escaping.

The helpers below produce the slot values from graphs and samples so
every strategy renders task lists and in-context examples the same way.
"""
import json
import os
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined, meta

from src.errors import MissingSlot, UnknownSlot
from src.models.graph import TaskGraph, TaskNode
from src.models.plan import PlanSample

#: The folder of the bundled templates.
PROMPTS_DIR = os.path.join(
    os.path.dirname(os.path.dirname(__file__)), "templates", "prompts"
)

DIRECT_INFERENCE = "direct_inference"
STEPS_ONLY = "steps_only"
TASK_ASSESSMENT = "task_assessment"
PATH_SELECTION = "path_selection"
PARAMETER_FILL = "parameter_fill"
GRAPH_PROBLEM = "graph_problem"

#: Every bundled template.
TEMPLATES = (
    DIRECT_INFERENCE,
    STEPS_ONLY,
    TASK_ASSESSMENT,
    PATH_SELECTION,
    PARAMETER_FILL,
    GRAPH_PROBLEM,
)


@lru_cache(maxsize=None)
def environment(folder: str = PROMPTS_DIR) -> Environment:
    """The template environment of a folder."""
    return Environment(
        loader=FileSystemLoader(folder),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        autoescape=False,
    )


def template_source(name: str, folder: str = PROMPTS_DIR) -> str:
    """The raw text of a template."""
    env = environment(folder)
    source, _, _ = env.loader.get_source(env, f"{name}.txt")
    return source


def template_slots(name: str, folder: str = PROMPTS_DIR) -> frozenset:
    """The slot names a template expects.

    :param name: The template name.
    :type name: str
    :return: The slot names.
    :rtype: frozenset
    """
    env = environment(folder)
    parsed = env.parse(template_source(name, folder))
    return frozenset(meta.find_undeclared_variables(parsed))


def render(name: str, slots: Mapping[str, str], folder: str = PROMPTS_DIR) -> str:
    """Render a template.

    :param name: The template name.
    :type name: str
    :param slots: One string per slot.
    :type slots: Mapping[str, str]
    :raises MissingSlot: A slot has no value.
    :raises UnknownSlot: A value matches no slot.
    :return: The prompt.
    :rtype: str
    """
    expected = template_slots(name, folder)
    missing = sorted(expected - set(slots))
    if missing:
        raise MissingSlot(f"Template {name!r} needs slots {missing}.")
    unknown = sorted(set(slots) - expected)
    if unknown:
        raise UnknownSlot(f"Template {name!r} has no slots {unknown}.")
    template = environment(folder).get_template(f"{name}.txt")
    return template.render(**{key: str(value) for key, value in slots.items()})


def render_task_list(nodes: Iterable[TaskNode]) -> str:
    """One JSON object per line: ``{"id": name, "desc": description}``."""
    return "\n".join(
        json.dumps({"id": node.name, "desc": node.description}, ensure_ascii=False)
        for node in nodes
    )


def render_graph_tasks(graph: TaskGraph, ids: Sequence[int] = None) -> str:
    """The task list of a graph, optionally restricted to node ids."""
    nodes = graph.nodes if ids is None else [graph.nodes[node] for node in ids]
    return render_task_list(nodes)


def _dump(value) -> str:
    return json.dumps(value, ensure_ascii=False)


def render_plan_example(sample: PlanSample) -> str:
    """The in-context example of the direct inference prompt."""
    record = sample.to_record()
    record.pop("id")
    request = record.pop("request")
    return f"# USER REQUEST #\n{request}\n# RESULT #\n{_dump(record)}"


def render_steps_example(sample: PlanSample) -> str:
    """The in-context example of the decomposition prompt."""
    return (
        f"# USER REQUEST #\n{sample.request}\n"
        f"# RESULT #\n{_dump({'task_steps': list(sample.steps)})}"
    )


def render_assessment_example(sample: PlanSample) -> str:
    """The in-context example of the assessment prompt: the first step
    of the example sample scored against its ground truth task.
    """
    step = sample.steps[0] if sample.steps else sample.request
    return f"# STEP #\n{step}\n# RESULT #\n{_dump({sample.gt_nodes[0]: 5})}"


def render_parameter_example(sample: PlanSample) -> str:
    """The in-context example of the parameter filling prompt."""
    record = sample.to_record()
    return (
        f"# USER REQUEST #\n{sample.request}\n"
        f"# PLANNED TASKS #\n{_dump(list(sample.gt_nodes))}\n"
        f"# RESULT #\n{_dump({'task_nodes': record['task_nodes']})}"
    )


def render_task_details(graph: TaskGraph, names: Sequence[str]) -> str:
    """The description of each planned task, one per line."""
    lines = []
    for name in names:
        description = graph.nodes[graph.node_id(name)].description
        lines.append(_dump({"task": name, "desc": description}))
    return "\n".join(lines)
