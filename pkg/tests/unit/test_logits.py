"""This module defines unit test cases for the next-node logit checks
defined in ``theory`` package in :file:`logits.py` module.
"""
import pytest

from src.errors import SchemaError, UnknownNode
from src.theory.logits import (
    PathDataset,
    example_dataset,
    fit_tabular,
    frequency_logits,
    random_dataset,
)

UNIFORM = {"a": 0.25, "b": 0.25, "c": 0.25, "d": 0.25}


class TestPathDataset:
    """Test :class:`PathDataset` class."""

    def test_from_paths(self):
        """Paths are prefixed with their source and target."""
        dataset = example_dataset()
        assert dataset.sequences == (
            ("a", "c", "a", "b", "c"),
            ("b", "d", "b", "c", "d"),
        )
        assert dataset.vocabulary == ("a", "b", "c", "d")

    def test_counts(self):
        """Successors are counted per target."""
        counts = example_dataset().counts()
        index = example_dataset().index
        assert counts[index["c"], index["a"], index["b"]] == 1
        assert counts[index["d"], index["b"], index["c"]] == 1
        assert counts.sum() == 4

    def test_malformed(self):
        """Sequences must read source, target, source, ..., target."""
        with pytest.raises(SchemaError):
            PathDataset((("a", "b", "c", "b"),), ("a", "b", "c"))
        with pytest.raises(SchemaError):
            PathDataset((("a", "b", "a"),), ("a", "b"))

    def test_unknown_token(self):
        """Tokens must be in the vocabulary."""
        with pytest.raises(UnknownNode):
            PathDataset((("a", "b", "a", "x", "b"),), ("a", "b"))


class TestFrequencyLogits:
    """Test :func:`frequency_logits` function."""

    def test_example(self):
        """Observed contexts predict their successors."""
        model = frequency_logits(example_dataset())
        assert model.row("c", "a")["b"] == 1.0
        assert model.row("d", "c")["d"] == 1.0
        assert model.is_constrained("c", "b")

    def test_unconstrained(self):
        """Unseen contexts stay uniform and are listed."""
        model = frequency_logits(example_dataset())
        assert not model.is_constrained("d", "a")
        assert ("d", "a") in model.unconstrained
        assert ("c", "a") not in model.unconstrained
        assert model.row("d", "a") == pytest.approx(UNIFORM)

    def test_split_frequencies(self):
        """Several successors share the probability mass."""
        dataset = PathDataset.from_paths(
            [("a", "b", "d"), ("a", "c", "d"), ("a", "b", "d")]
        )
        assert frequency_logits(dataset).row("d", "a") == pytest.approx(
            {"a": 0.0, "b": 2 / 3, "c": 1 / 3, "d": 0.0}
        )


class TestFitTabular:
    """Test :func:`fit_tabular` function."""

    @pytest.mark.parametrize("seed", [0, 1])
    def test_converges_to_frequencies(self, seed):
        """Gradient descent reaches the observed frequencies."""
        dataset = random_dataset(seed)
        fitted = fit_tabular(dataset)
        assert frequency_logits(dataset).distance(fitted) < 1e-3

    def test_unconstrained_untouched(self):
        """Contexts without data keep uniform predictions."""
        fitted = fit_tabular(example_dataset(), steps=50)
        assert fitted.row("d", "a") == pytest.approx(UNIFORM)

    def test_steps(self):
        """At least one step is needed."""
        with pytest.raises(SchemaError):
            fit_tabular(example_dataset(), steps=0)
