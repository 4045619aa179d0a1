"""This module checks the frequency law of next-node prediction on path
data.

Training sequences read ``s t s v1 v2 ... t``: a source, a target, then
the path from the source to the target. When the next-node logits may
only depend on the target and the current node, the cross-entropy
optimum predicts the empirical frequencies of the observed successors.
Contexts never observed receive no gradient and stay unconstrained.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np

from src.errors import NonFiniteLoss, SchemaError, UnknownNode

logger = logging.getLogger(__name__)

#: First predicted position of every sequence.
FIRST_TARGET = 3

Context = Tuple[Hashable, Hashable]


@dataclass(frozen=True)
class PathDataset:
    """Training sequences over a node vocabulary.

    :param sequences: Token sequences ``s t s v1 ... t``.
    :type sequences: Tuple[Tuple[Hashable, ...], ...]
    :param vocabulary: Every node, sorted.
    :type vocabulary: Tuple[Hashable, ...]
    """

    sequences: Tuple[Tuple[Hashable, ...], ...]
    vocabulary: Tuple[Hashable, ...]

    def __post_init__(self):
        known = set(self.vocabulary)
        for sequence in self.sequences:
            if (
                len(sequence) < 4
                or sequence[2] != sequence[0]
                or sequence[-1] != sequence[1]
            ):
                raise SchemaError(
                    f"Sequence {list(sequence)} is not of the form s t s ... t."
                )
            unknown = [token for token in sequence if token not in known]
            if unknown:
                raise UnknownNode(f"Tokens {unknown} are not in the vocabulary.")

    @classmethod
    def from_paths(
        cls, paths: Sequence[Sequence[Hashable]], vocabulary=None
    ) -> "PathDataset":
        """Build sequences from node paths of at least two nodes.

        :param paths: The paths, each from its source to its target.
        :type paths: Sequence[Sequence[Hashable]]
        :param vocabulary: The nodes, defaults to those on the paths
        :type vocabulary: Iterable[Hashable], optional
        :return: The dataset.
        :rtype: PathDataset
        """
        sequences = tuple((path[0], path[-1]) + tuple(path) for path in paths)
        if vocabulary is None:
            vocabulary = {token for path in paths for token in path}
        return cls(sequences, tuple(sorted(vocabulary)))

    @property
    def index(self) -> Dict[Hashable, int]:
        """Position of every node in the vocabulary."""
        return {token: position for position, token in enumerate(self.vocabulary)}

    def counts(self) -> np.ndarray:
        """``N[t, v, u]``: how often ``u`` follows ``v`` on the way to ``t``."""
        index = self.index
        size = len(self.vocabulary)
        counts = np.zeros((size, size, size))
        for sequence in self.sequences:
            target = index[sequence[1]]
            for position in range(FIRST_TARGET, len(sequence)):
                previous = index[sequence[position - 1]]
                counts[target, previous, index[sequence[position]]] += 1
        return counts


@dataclass(frozen=True, eq=False)
class TabularLogitModel:
    """Next-node distributions per ``(target, current)`` context.

    :param vocabulary: The nodes.
    :type vocabulary: Tuple[Hashable, ...]
    :param probs: ``probs[t, v]`` is the distribution of the next node.
    :type probs: np.ndarray
    :param constrained: Whether data was observed in each context.
    :type constrained: np.ndarray
    """

    vocabulary: Tuple[Hashable, ...]
    probs: np.ndarray
    constrained: np.ndarray

    def row(self, target: Hashable, current: Hashable) -> Dict[Hashable, float]:
        """The distribution of one context."""
        index = {token: position for position, token in enumerate(self.vocabulary)}
        values = self.probs[index[target], index[current]]
        return {token: float(value) for token, value in zip(self.vocabulary, values)}

    def is_constrained(self, target: Hashable, current: Hashable) -> bool:
        """Whether data was observed in a context."""
        index = {token: position for position, token in enumerate(self.vocabulary)}
        return bool(self.constrained[index[target], index[current]])

    @property
    def unconstrained(self) -> List[Context]:
        """Contexts without observations, in vocabulary order."""
        return [
            (self.vocabulary[target], self.vocabulary[current])
            for target, current in zip(*np.nonzero(~self.constrained))
        ]

    def distance(self, other: "TabularLogitModel") -> float:
        """Largest absolute probability gap over constrained contexts."""
        if not self.constrained.any():
            return 0.0
        gap = np.abs(self.probs - other.probs)[self.constrained]
        return float(gap.max())


def _uniform(size: int) -> np.ndarray:
    return np.full((size, size, size), 1.0 / size) if size else np.zeros((0, 0, 0))


def frequency_logits(dataset: PathDataset) -> TabularLogitModel:
    """The closed-form optimum: observed successor frequencies.

    :param dataset: The path data.
    :type dataset: PathDataset
    :return: The model, uniform rows in unconstrained contexts.
    :rtype: TabularLogitModel
    """
    counts = dataset.counts()
    totals = counts.sum(axis=2)
    constrained = totals > 0
    probs = _uniform(len(dataset.vocabulary))
    probs[constrained] = counts[constrained] / totals[constrained][:, None]
    return TabularLogitModel(dataset.vocabulary, probs, constrained)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def fit_tabular(
    dataset: PathDataset, steps: int = 6000, lr: float = 2.0
) -> TabularLogitModel:
    """Fit tabular logits by full-batch gradient descent on the
    cross-entropy of every predicted position.

    Each observed context contributes its mean cross-entropy, so every
    context trains at the same rate. The optimum matches the pooled loss.
    Logits start at zero.

    :param dataset: The path data.
    :type dataset: PathDataset
    :param steps: Gradient steps, defaults to 6000
    :type steps: int, optional
    :param lr: The learning rate, defaults to 2.0
    :type lr: float, optional
    :raises SchemaError: ``steps`` is not positive.
    :raises NonFiniteLoss: The loss diverged.
    :return: The fitted model.
    :rtype: TabularLogitModel
    """
    if steps < 1:
        raise SchemaError("fit_tabular needs at least one step.")
    counts = dataset.counts()
    totals = counts.sum(axis=2)
    constrained = totals > 0
    targets = np.zeros_like(counts)
    targets[constrained] = counts[constrained] / totals[constrained][:, None]
    logits = np.zeros_like(counts)
    rows = max(int(constrained.sum()), 1)

    for step in range(steps):
        probs = _softmax(logits)
        gradient = (probs - targets) * constrained[..., None]
        logits -= lr * gradient
        if step == steps - 1 or step % 1000 == 0:
            with np.errstate(divide="ignore"):
                log_probs = np.log(np.where(targets > 0, probs, 1.0))
                loss = -np.sum(targets * log_probs) / rows
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"Loss diverged at step {step}.")
            logger.debug("Tabular fit step %s loss %.6f", step, loss)

    return TabularLogitModel(dataset.vocabulary, _softmax(logits), constrained)


def example_dataset() -> PathDataset:
    """Two paths ``a b c`` and ``b c d``."""
    return PathDataset.from_paths([("a", "b", "c"), ("b", "c", "d")])


def random_dataset(seed: int, nodes: int = 6, paths: int = 50) -> PathDataset:
    """Random simple paths over a small vocabulary.

    :param seed: The random seed.
    :type seed: int
    :param nodes: Vocabulary size, defaults to 6
    :type nodes: int, optional
    :param paths: Path count, defaults to 50
    :type paths: int, optional
    :return: The dataset.
    :rtype: PathDataset
    """
    rng = np.random.default_rng(seed)
    drawn = []
    for _ in range(paths):
        length = int(rng.integers(2, nodes + 1))
        drawn.append(tuple(int(node) for node in rng.permutation(nodes)[:length]))
    return PathDataset.from_paths(drawn, vocabulary=range(nodes))
