"""This module scores plans against their ground truth and emits the
evaluation reports.

Node and link F1 use set semantics over task names and directed
``(source, target)`` name pairs. Means are macro averages over every
test sample, failed plans scoring 0 on every quality metric while
still counting their tokens.

Parameter metrics are simplified: ``v-F1`` compares ``(task, value)``
pairs and ``t-F1`` compares ``(task, type)`` pairs, the argument name
standing in when a dataset carries no type.
"""
import csv
import io
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Union

from src.errors import ConfigError, EmptyScores
from src.models.graph import TaskGraph
from src.models.plan import FLAG_PARSE_FAILURE, Arguments, Plan, PlanSample
from src.services import prompts
from src.services.storage import dump_json, write_json, write_text

logger = logging.getLogger(__name__)

#: Version of the JSON report layout.
REPORT_VERSION = 1

#: Supported report formats.
FORMATS = ("json", "csv", "markdown")

#: Quality metrics averaged over every sample.
METRICS = ("n_f1", "l_f1", "acc", "node_hall", "edge_hall")

#: Metrics averaged over the samples carrying arguments.
OPTIONAL_METRICS = ("param_t_f1", "param_v_f1")

#: Column order of the CSV report.
CSV_COLUMNS = (
    "strategy",
    "model",
    "samples",
    "n_f1",
    "l_f1",
    "acc",
    "node_hall",
    "edge_hall",
    "param_t_f1",
    "param_v_f1",
    "tok_k",
    "tokens_total",
    "parse_failures",
)

#: The folder of the report templates.
REPORTS_DIR = os.path.join(os.path.dirname(prompts.PROMPTS_DIR), "reports")

PARAMETER_NOTE = (
    "Parameter F1 uses simplified typing: argument type, else argument name."
)


def set_f1(pred: Iterable[Hashable], gt: Iterable[Hashable]) -> float:
    """F1 score between two sets.

    :param pred: Predicted items, duplicates collapsed.
    :type pred: Iterable[Hashable]
    :param gt: Ground truth items, duplicates collapsed.
    :type gt: Iterable[Hashable]
    :return: ``2PR / (P + R)``, 1 when both sets are empty.
    :rtype: float
    """
    pred, gt = set(pred), set(gt)
    if not pred and not gt:
        return 1.0
    hits = len(pred & gt)
    if hits == 0:
        return 0.0
    precision = hits / len(pred)
    recall = hits / len(gt)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SampleScore:
    """Scores of one plan.

    :param sample_id: The sample id.
    :type sample_id: str
    :param n_f1: Node F1.
    :type n_f1: float
    :param l_f1: Link F1.
    :type l_f1: float
    :param acc: 1 when the predicted task set equals the ground truth.
    :type acc: int
    :param node_hall: Share of predicted nodes absent from the graph.
    :type node_hall: float
    :param edge_hall: Share of predicted links absent from the graph.
    :type edge_hall: float
    :param param_t_f1: Argument type F1, defaults to None
    :type param_t_f1: float, optional
    :param param_v_f1: Argument value F1, defaults to None
    :type param_v_f1: float, optional
    :param tokens: Tokens used by the plan, defaults to 0
    :type tokens: int, optional
    :param failed: The LLM output was unusable, defaults to False
    :type failed: bool, optional
    :param path_length: Ground truth task count, defaults to 0
    :type path_length: int, optional
    :param calls: Exchanges per template, defaults to {}
    :type calls: Dict[str, int], optional
    :param latency: Seconds spent in LLM calls, defaults to 0.0
    :type latency: float, optional
    """

    # pylint: disable=too-many-instance-attributes
    sample_id: str
    n_f1: float
    l_f1: float
    acc: int
    node_hall: float
    edge_hall: float
    param_t_f1: Optional[float] = None
    param_v_f1: Optional[float] = None
    tokens: int = 0
    failed: bool = False
    path_length: int = 0
    calls: Dict[str, int] = field(default_factory=dict)
    latency: float = field(default=0.0, compare=False)

    def to_record(self) -> dict:
        """The report shape, latency excluded."""
        record = asdict(self)
        del record["latency"]
        return record

    @classmethod
    def from_record(cls, record: dict) -> "SampleScore":
        """Read a score from its report shape."""
        return cls(**record)


def _ratio(part: int, whole: int) -> float:
    return part / whole if whole else 0.0


def _pairs(nodes, arguments: Optional[Arguments], key) -> set:
    if arguments is None:
        return set()
    pairs = set()
    for name, values in zip(nodes, arguments):
        for argument in values:
            value = key(argument)
            if value is not None:
                pairs.add((name, value))
    return pairs


def _type_key(argument):
    return argument.type or argument.name


def _value_key(argument):
    return argument.value


def score_sample(plan: Plan, sample: PlanSample, graph: TaskGraph) -> SampleScore:
    """Score a plan against its sample.

    :param plan: The plan.
    :type plan: Plan
    :param sample: The sample with its ground truth.
    :type sample: PlanSample
    :param graph: The task graph.
    :type graph: TaskGraph
    :return: The scores.
    :rtype: SampleScore
    """
    purposes = Counter(exchange.purpose for exchange in plan.exchanges)
    calls = dict(sorted(purposes.items()))
    latency = sum(exchange.latency for exchange in plan.exchanges)
    common = {
        "sample_id": sample.id,
        "tokens": plan.token_usage,
        "path_length": len(sample.gt_nodes),
        "calls": calls,
        "latency": latency,
    }
    if plan.failed:
        return SampleScore(
            n_f1=0.0,
            l_f1=0.0,
            acc=0,
            node_hall=0.0,
            edge_hall=0.0,
            failed=True,
            **common,
        )

    pred_nodes, gt_nodes = set(plan.nodes), set(sample.gt_nodes)
    pred_links = set(plan.links)
    fake_nodes = sum(1 for name in pred_nodes if not graph.contains_node(name))
    fake_links = sum(1 for link in pred_links if not graph.contains_edge(*link))
    node_hall = _ratio(fake_nodes, len(pred_nodes))
    edge_hall = _ratio(fake_links, len(pred_links))

    param_t_f1 = param_v_f1 = None
    if plan.arguments is not None and sample.arguments is not None:
        gt_types = _pairs(sample.gt_nodes, sample.arguments, _type_key)
        if gt_types:
            param_t_f1 = set_f1(_pairs(plan.nodes, plan.arguments, _type_key), gt_types)
        param_v_f1 = set_f1(
            _pairs(plan.nodes, plan.arguments, _value_key),
            _pairs(sample.gt_nodes, sample.arguments, _value_key),
        )

    return SampleScore(
        n_f1=set_f1(pred_nodes, gt_nodes),
        l_f1=set_f1(pred_links, sample.gt_links),
        acc=int(pred_nodes == gt_nodes),
        node_hall=node_hall,
        edge_hall=edge_hall,
        param_t_f1=param_t_f1,
        param_v_f1=param_v_f1,
        **common,
    )


def _means(scores: Sequence[SampleScore]) -> Dict[str, Optional[float]]:
    means = {
        name: sum(getattr(score, name) for score in scores) / len(scores)
        for name in METRICS
    }
    for name in OPTIONAL_METRICS:
        values = [
            getattr(score, name)
            for score in scores
            if getattr(score, name) is not None
        ]
        means[name] = sum(values) / len(values) if values else None
    return means


def breakdown(
    scores: Sequence[SampleScore], samples: Sequence[PlanSample] = None
) -> Dict[int, Dict[str, float]]:
    """Macro means per ground truth path length.

    :param scores: The sample scores.
    :type scores: Sequence[SampleScore]
    :param samples: The samples, defaults to the lengths kept in the
        scores
    :type samples: Sequence[PlanSample], optional
    :return: ``{length: {metric: mean, "samples": count}}``, sorted by
        length.
    :rtype: Dict[int, Dict[str, float]]
    """
    lengths = {sample.id: len(sample.gt_nodes) for sample in samples or ()}
    groups: Dict[int, List[SampleScore]] = {}
    for score in scores:
        length = lengths.get(score.sample_id, score.path_length)
        groups.setdefault(length, []).append(score)
    return {
        length: {"samples": len(group), **_means(group)}
        for length, group in sorted(groups.items())
    }


@dataclass(frozen=True)
class Report:
    """Aggregated scores of one evaluation run.

    :param strategy: The planning strategy.
    :type strategy: str
    :param model: The LLM model identifier.
    :type model: str
    :param scores: Per-sample scores in sample order.
    :type scores: Tuple[SampleScore, ...]
    :param means: Macro mean of every metric.
    :type means: Dict[str, Optional[float]]
    :param parse_failures: Samples whose LLM output failed to parse.
    :type parse_failures: int
    :param failed: Samples with a failed plan.
    :type failed: int
    :param tokens_total: Tokens over every sample.
    :type tokens_total: int
    :param calls: Exchanges per template over every sample.
    :type calls: Dict[str, int]
    :param by_length: Means per ground truth path length.
    :type by_length: Dict[int, Dict[str, float]]
    :param wall_clock: Seconds the run took, defaults to 0.0
    :type wall_clock: float, optional
    """

    # pylint: disable=too-many-instance-attributes
    strategy: str
    model: str
    scores: tuple
    means: Dict[str, Optional[float]]
    parse_failures: int
    failed: int
    tokens_total: int
    calls: Dict[str, int]
    by_length: Dict[int, Dict[str, float]]
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def tok_k(self) -> float:
        """Mean tokens per sample in thousands."""
        return self.tokens_total / len(self.scores) / 1000

    @property
    def latency_total(self) -> float:
        """Seconds spent in LLM calls."""
        return sum(score.latency for score in self.scores)

    def to_record(self) -> dict:
        """The JSON report shape, timings excluded."""
        return {
            "report_version": REPORT_VERSION,
            "strategy": self.strategy,
            "model": self.model,
            "samples": len(self.scores),
            "means": self.means,
            "parse_failures": self.parse_failures,
            "failed": self.failed,
            "tokens": {"total": self.tokens_total, "per_sample_k": self.tok_k},
            "calls": self.calls,
            "by_length": {
                str(length): means for length, means in self.by_length.items()
            },
            "notes": [PARAMETER_NOTE],
            "per_sample": [score.to_record() for score in self.scores],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Report":
        """Read a report from its JSON shape.

        :raises ConfigError: The report version is not supported.
        """
        if record.get("report_version") != REPORT_VERSION:
            raise ConfigError(
                f"Unsupported report version {record.get('report_version')!r}."
            )
        return cls(
            strategy=record["strategy"],
            model=record["model"],
            scores=tuple(
                SampleScore.from_record(item) for item in record["per_sample"]
            ),
            means=dict(record["means"]),
            parse_failures=record["parse_failures"],
            failed=record["failed"],
            tokens_total=record["tokens"]["total"],
            calls=dict(record["calls"]),
            by_length={
                int(length): means for length, means in record["by_length"].items()
            },
        )

    def timing_record(self) -> dict:
        """Wall-clock and latency figures, kept out of the main report."""
        return {
            "strategy": self.strategy,
            "wall_clock": self.wall_clock,
            "latency_total": self.latency_total,
            "latency_per_sample": self.latency_total / len(self.scores),
        }

    def row(self) -> dict:
        """One summary row, columns as in :data:`CSV_COLUMNS`."""
        return {
            "strategy": self.strategy,
            "model": self.model,
            "samples": len(self.scores),
            **{name: self.means[name] for name in METRICS + OPTIONAL_METRICS},
            "tok_k": self.tok_k,
            "tokens_total": self.tokens_total,
            "parse_failures": self.parse_failures,
        }


def aggregate(
    scores: Sequence[SampleScore],
    strategy: str = "",
    model: str = "",
    samples: Sequence[PlanSample] = None,
    wall_clock: float = 0.0,
    parse_failures: int = None,
) -> Report:
    """Macro-average sample scores into a report.

    :param scores: The sample scores, non-empty.
    :type scores: Sequence[SampleScore]
    :param strategy: The strategy name, defaults to ""
    :type strategy: str, optional
    :param model: The model identifier, defaults to ""
    :type model: str, optional
    :param samples: The scored samples, defaults to None
    :type samples: Sequence[PlanSample], optional
    :param wall_clock: Seconds the run took, defaults to 0.0
    :type wall_clock: float, optional
    :param parse_failures: Parse failure count, defaults to the failed
        sample count
    :type parse_failures: int, optional
    :raises EmptyScores: No score was given.
    :return: The report.
    :rtype: Report
    """
    # pylint: disable=too-many-arguments
    if not scores:
        raise EmptyScores("Cannot aggregate an empty score list.")
    failed = sum(1 for score in scores if score.failed)
    calls = Counter()
    for score in scores:
        calls.update(score.calls)
    return Report(
        strategy=strategy,
        model=model,
        scores=tuple(scores),
        means=_means(scores),
        parse_failures=failed if parse_failures is None else parse_failures,
        failed=failed,
        tokens_total=sum(score.tokens for score in scores),
        calls=dict(sorted(calls.items())),
        by_length=breakdown(scores, samples),
        wall_clock=wall_clock,
    )


def count_parse_failures(plans: Iterable[Plan]) -> int:
    """Plans carrying a parse failure flag."""
    return sum(1 for plan in plans if FLAG_PARSE_FAILURE in plan.flags)


def _format(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_report(reports: Union[Report, Sequence[Report]], fmt: str) -> str:
    """Serialize reports.

    :param reports: One report, or one per strategy.
    :type reports: Union[Report, Sequence[Report]]
    :param fmt: ``json``, ``csv`` or ``markdown``.
    :type fmt: str
    :raises ConfigError: The format is unknown.
    :return: The serialized text.
    :rtype: str
    """
    if isinstance(reports, Report):
        reports = [reports]
    if fmt == "json":
        records = [report.to_record() for report in reports]
        return dump_json(records[0] if len(records) == 1 else records)
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            row = report.row()
            writer.writerow(
                {key: "" if value is None else value for key, value in row.items()}
            )
        return buffer.getvalue()
    if fmt == "markdown":
        rows = [
            {key: _format(value) for key, value in report.row().items()}
            for report in reports
        ]
        template = prompts.environment(REPORTS_DIR).get_template("summary.md")
        return template.render(rows=rows, notes=[PARAMETER_NOTE])
    raise ConfigError(f"Unknown report format {fmt!r}, expected one of {FORMATS}.")


def emit_report(reports: Union[Report, Sequence[Report]], fmt: str, path: str) -> str:
    """Write reports atomically.

    :param reports: One report, or one per strategy.
    :type reports: Union[Report, Sequence[Report]]
    :param fmt: ``json``, ``csv`` or ``markdown``.
    :type fmt: str
    :param path: The destination file.
    :type path: str
    :raises IoError: The file could not be written.
    :return: The path.
    :rtype: str
    """
    write_text(path, render_report(reports, fmt))
    logger.info("Wrote %s report to %s", fmt, path)
    return path


def emit_timing(reports: Union[Report, Sequence[Report]], path: str) -> str:
    """Write the timing figures next to the reports."""
    if isinstance(reports, Report):
        reports = [reports]
    write_json(path, [report.timing_record() for report in reports])
    return path

