"""This module defines the exception hierarchy shared by every package
module. Each exception family carries the exit code the command line
interface returns when the error escapes a command:

* :class:`ConfigError` exits with ``1``.
* :class:`ServiceError` exits with ``2``.
* :class:`DataError` exits with ``3``.

.. note:: Raise the most specific subclass available. Commands only catch
    :class:`PlannerError`, so anything else is reported as a crash.
"""

ERROR_DANGLING_EDGE = "Edge {source!r} -> {target!r} references an unknown node."
ERROR_DUPLICATE_NODE = "Node {name!r} is declared more than once."
ERROR_UNKNOWN_NODE = "Node id {node} is not part of the graph."
ERROR_PERMUTATION = "Permutation must be a bijection on 0..{n}."
ERROR_REPLAY_MISS = "No recorded exchange for key {key}."


class PlannerError(Exception):
    """Base class for every error raised by the planner."""

    #: The process exit code used by the command line interface.
    exit_code = 1


class ConfigError(PlannerError):
    """The run configuration is invalid or incomplete."""

    exit_code = 1


class ServiceError(PlannerError):
    """A remote service (LLM or embedding endpoint) failed."""

    exit_code = 2


class ServiceUnavailable(ServiceError):
    """The remote service kept failing after every retry."""


class ReplayMiss(ServiceError):
    """No recorded or canned exchange exists for a prompt."""


class DataError(PlannerError):
    """An input file or an in-memory value violates its contract."""

    exit_code = 3


class ParseError(DataError):
    """A file could not be decoded."""


class ParseFailure(DataError):
    """An LLM response could not be turned into a usable value.

    :param message: The error message.
    :type message: str
    :param exchange: The exchange whose response failed, defaults to None
    :type exchange: LlmExchange, optional
    """

    def __init__(self, message, exchange=None):
        super().__init__(message)
        self.exchange = exchange


class SchemaError(DataError):
    """A record is missing a required field."""


class DanglingEdge(DataError):
    """A link references a node that does not exist."""


class DuplicateNode(DataError):
    """Two nodes share the same name."""


class UnknownNode(DataError):
    """A node id is out of range."""


class InvalidPermutation(DataError):
    """A relabeling is not a bijection."""


class InsufficientSamples(DataError):
    """A split asks for more samples than are eligible."""


class EmbeddingShapeMismatch(DataError):
    """An embedding matrix does not match the graph."""


class CacheMiss(DataError):
    """A text is not present in an embedding cache."""


class DimMismatch(DataError):
    """Two vectors have different dimensions."""


class ShapeMismatch(DataError):
    """A matrix does not have the expected shape."""


class ZeroVector(DataError):
    """A zero vector has no direction."""


class NonFiniteLoss(DataError):
    """An optimizer produced a NaN or infinite loss."""


class NonFiniteValue(DataError):
    """A dynamic program produced a NaN or infinite value."""


class EmptyTriplets(DataError):
    """Training was requested without any triplet."""


class EmptyScores(DataError):
    """Aggregation was requested without any sample score."""


class EmptyDecomposition(DataError):
    """The LLM returned no task steps.

    :param message: The error message.
    :type message: str
    :param exchange: The exchange that produced the empty answer.
    :type exchange: LlmExchange, optional
    """

    def __init__(self, message, exchange=None):
        super().__init__(message)
        self.exchange = exchange


class EmptyProbe(DataError):
    """A permutation probe was requested without problems."""


class MissingSlot(DataError):
    """A prompt template slot was not provided."""


class UnknownSlot(DataError):
    """A provided value matches no prompt template slot."""


class ProblemTooLarge(DataError):
    """An exact solver was asked to solve an instance beyond its bound."""


class OracleMismatch(DataError):
    """A theory check disagreed with its reference oracle."""


class IoError(DataError):
    """An artifact could not be written."""
