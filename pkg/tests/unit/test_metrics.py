"""This module defines unit test cases for the plan scoring and reports
defined in :file:`metrics.py` module.
"""
import csv
import io
import json

import pytest
from freezegun import freeze_time

from src.errors import ConfigError, EmptyScores
from src.metrics import (
    CSV_COLUMNS,
    REPORT_VERSION,
    Report,
    SampleScore,
    aggregate,
    breakdown,
    count_parse_failures,
    emit_report,
    emit_timing,
    render_report,
    score_sample,
    set_f1,
)
from src.models.graph import TaskGraph
from src.models.plan import FLAG_PARSE_FAILURE, Argument, failed_plan
from src.services.llm import LlmClient, MockTransport
from tests.factories import (
    ExchangeFactory,
    PlanFactory,
    PlanSampleFactory,
    SampleScoreFactory,
)


@pytest.mark.parametrize(
    "pred, gt, expected",
    [
        ([], [], 1.0),
        (["a"], [], 0.0),
        ([], ["a"], 0.0),
        (["a", "b"], ["a", "b"], 1.0),
        (["a", "a", "b"], ["a", "b"], 1.0),
        (["a", "c"], ["a", "b"], 0.5),
        (["a"], ["a", "b", "c"], 0.5),
        (["x"], ["a"], 0.0),
    ],
)
def test_set_f1(pred, gt, expected):
    """F1 over sets, duplicates collapsed."""
    assert set_f1(pred, gt) == pytest.approx(expected)


class TestScoreSample:
    """Test :func:`score_sample` function."""

    def test_perfect(self, graph: TaskGraph):
        """The ground truth plan scores 1 with no hallucination."""
        score = score_sample(PlanFactory(), PlanSampleFactory(id="a"), graph)
        assert (score.n_f1, score.l_f1, score.acc) == (1.0, 1.0, 1)
        assert (score.node_hall, score.edge_hall) == (0.0, 0.0)
        assert score.tokens == 50
        assert score.calls == {"steps_only": 1}
        assert score.param_t_f1 is None and score.param_v_f1 is None

    def test_hallucinated(self, graph: TaskGraph):
        """Unknown tasks and links count against the plan."""
        plan = PlanFactory(nodes=("Object Detection", "Image Captioning"))
        sample = PlanSampleFactory(gt_nodes=("Object Detection", "Image-to-Text"))
        score = score_sample(plan, sample, graph)
        assert score.n_f1 == pytest.approx(0.5)
        assert score.l_f1 == 0.0
        assert score.acc == 0
        assert score.node_hall == pytest.approx(0.5)
        assert score.edge_hall == pytest.approx(1.0)

    def test_accuracy_ignores_order(self, graph: TaskGraph):
        """Accuracy compares task sets."""
        plan = PlanFactory(nodes=("Text-to-Speech", "Image-to-Text"))
        score = score_sample(plan, PlanSampleFactory(), graph)
        assert score.acc == 1
        assert score.l_f1 == 0.0
        assert score.edge_hall == 1.0

    def test_failed(self, graph: TaskGraph):
        """Failed plans score 0 but keep their tokens."""
        plan = failed_plan([ExchangeFactory()], [FLAG_PARSE_FAILURE])
        score = score_sample(plan, PlanSampleFactory(), graph)
        assert score.failed
        assert (score.n_f1, score.l_f1, score.acc) == (0.0, 0.0, 0)
        assert score.tokens == 50

    def test_parameters(self, graph: TaskGraph):
        """Values and types are compared per task."""
        truth = (
            (Argument("a.png", name="image", type="file"),),
            (Argument("<node-0>", name="text", type="text"),),
        )
        predicted = (
            (Argument("a.png", name="image", type="file"),),
            (Argument("hello", name="text", type="text"),),
        )
        score = score_sample(
            PlanFactory(arguments=predicted), PlanSampleFactory(arguments=truth), graph
        )
        assert score.param_t_f1 == 1.0
        assert score.param_v_f1 == pytest.approx(0.5)

    def test_untyped_parameters(self, graph: TaskGraph):
        """Plain values give no type F1."""
        truth = ((Argument("a.png"),), (Argument("<node-0>"),))
        plan = PlanFactory(arguments=truth)
        score = score_sample(plan, PlanSampleFactory(arguments=truth), graph)
        assert score.param_t_f1 is None
        assert score.param_v_f1 == 1.0

    def test_latency(self, graph: TaskGraph):
        """Frozen clocks measure no latency."""
        client = LlmClient(MockTransport([{"match": [], "response": "{}"}]))
        with freeze_time("2024-01-01"):
            exchange = client.chat("q", purpose="steps_only")
        plan = PlanFactory(exchanges=(exchange,))
        score = score_sample(plan, PlanSampleFactory(), graph)
        assert score.latency == 0.0


class TestAggregate:
    """Test :func:`aggregate` function."""

    def test_means(self):
        """Failed samples drag the macro means."""
        scores = [
            SampleScoreFactory(),
            SampleScoreFactory(n_f1=0.0, acc=0, failed=True),
        ]
        report = aggregate(scores, "greedy", "model")
        assert report.means["n_f1"] == pytest.approx(0.5)
        assert report.means["acc"] == pytest.approx(0.5)
        assert report.means["param_v_f1"] is None
        assert report.failed == 1 and report.parse_failures == 1
        assert report.tokens_total == 200
        assert report.tok_k == pytest.approx(0.1)
        assert report.calls == {"steps_only": 2}

    def test_optional_means(self):
        """Parameter means skip samples without arguments."""
        scores = [SampleScoreFactory(param_v_f1=0.5), SampleScoreFactory()]
        assert aggregate(scores).means["param_v_f1"] == pytest.approx(0.5)

    def test_breakdown(self):
        """Means are grouped by path length."""
        scores = [
            SampleScoreFactory(path_length=2),
            SampleScoreFactory(path_length=3, n_f1=0.5),
            SampleScoreFactory(path_length=3, n_f1=0.0),
        ]
        groups = breakdown(scores)
        assert list(groups) == [2, 3]
        assert groups[3]["samples"] == 2
        assert groups[3]["n_f1"] == pytest.approx(0.25)

    def test_empty(self):
        """No scores, no report."""
        with pytest.raises(EmptyScores):
            aggregate([])

    def test_parse_failures(self):
        """Only flagged plans count as parse failures."""
        plans = [PlanFactory(flags=(FLAG_PARSE_FAILURE,)), PlanFactory()]
        assert count_parse_failures(plans) == 1


class TestReports:
    """Test the report formats."""

    @pytest.fixture(name="report")
    def fixture_report(self) -> Report:
        """A report over two scores."""
        scores = [
            SampleScoreFactory(sample_id="a"),
            SampleScoreFactory(sample_id="b", l_f1=0.5),
        ]
        return aggregate(scores, "beam", "model", wall_clock=3.0)

    def test_json(self, report: Report):
        """The JSON report is versioned and reads back."""
        record = json.loads(render_report(report, "json"))
        assert record["report_version"] == REPORT_VERSION
        assert record["means"]["l_f1"] == pytest.approx(0.75)
        assert [item["sample_id"] for item in record["per_sample"]] == ["a", "b"]
        assert "latency" not in record["per_sample"][0]
        assert Report.from_record(record) == report

    def test_json_stable(self, report: Report):
        """Equal reports render to equal bytes."""
        assert render_report(report, "json") == render_report(report, "json")

    def test_version(self, report: Report):
        """Other layouts are rejected."""
        record = report.to_record()
        record["report_version"] = REPORT_VERSION + 1
        with pytest.raises(ConfigError):
            Report.from_record(record)

    def test_csv(self, report: Report):
        """One row per report, empty cells for missing means."""
        rows = list(csv.DictReader(io.StringIO(render_report([report, report], "csv"))))
        assert len(rows) == 2
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[0]["strategy"] == "beam"
        assert rows[0]["param_v_f1"] == ""

    def test_markdown(self, report: Report):
        """The markdown table has a row and the parameter note."""
        text = render_report(report, "markdown")
        lines = text.splitlines()
        assert lines[0].startswith("| Strategy |")
        assert lines[2].startswith("| beam | model | 2 | 1.0000 | 0.7500 |")
        assert "simplified typing" in text

    def test_unknown_format(self, report: Report):
        """Formats are validated."""
        with pytest.raises(ConfigError):
            render_report(report, "xml")

    def test_emit(self, report: Report, tmp_path):
        """Reports and timings are written to disk."""
        path = emit_report(report, "json", str(tmp_path / "report.json"))
        with open(path, encoding="utf-8") as file:
            assert json.load(file)["strategy"] == "beam"
        timing = emit_timing(report, str(tmp_path / "timing.json"))
        with open(timing, encoding="utf-8") as file:
            assert json.load(file)[0]["wall_clock"] == 3.0

    def test_from_record_score(self):
        """Scores read back without latency."""
        score = SampleScoreFactory(latency=2.0)
        assert SampleScore.from_record(score.to_record()) == score
