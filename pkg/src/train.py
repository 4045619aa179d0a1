"""This module trains the parametric retrieval scorers (``sage`` and
``gcn``) with the BPR ranking loss, minibatch Adam and early stopping.

Gradients are derived analytically; :func:`grad_check` compares them with
central finite differences. Step embeddings are computed once before
training, so an epoch only re-runs the GNN forward pass.

Training is deterministic for a given seed: triplets are put in a
canonical order before the seeded holdout split and shuffles, so the
order in which triplets are supplied does not matter.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, EmptyTriplets, NonFiniteLoss
from src.gnn import NormalizedAdjacency, build_adjacency, neighbor_mean
from src.models.gnn import Arch, GnnModel, weight_shapes
from src.models.graph import TaskGraph

logger = logging.getLogger(__name__)

#: Gradient magnitudes below this floor are compared in absolute terms.
GRAD_CHECK_FLOOR = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    :param lr: Adam learning rate, defaults to 1e-3
    :type lr: float, optional
    :param epochs: Maximum epochs, defaults to 20
    :type epochs: int, optional
    :param batch_size: Triplets per minibatch, defaults to 512
    :type batch_size: int, optional
    :param patience: Epochs without improvement before stopping,
        defaults to 5
    :type patience: int, optional
    :param seed: Seed of the init, split and shuffles, defaults to 0
    :type seed: int, optional
    :param l2: Weight decay coefficient, defaults to 0.0
    :type l2: float, optional
    :param holdout: Share of triplets monitored for early stopping,
        defaults to 0.1
    :type holdout: float, optional
    :param arch: ``sage`` or ``gcn``, defaults to "sage"
    :type arch: str, optional
    :param layers: Layer count, defaults to 1
    :type layers: int, optional
    :param dim_out: Output dimension, defaults to the input dimension
    :type dim_out: int, optional
    """

    # pylint: disable=too-many-instance-attributes
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 512
    patience: int = 5
    seed: int = 0
    l2: float = 0.0
    holdout: float = 0.1
    arch: str = "sage"
    layers: int = 1
    dim_out: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive.")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be at least 1.")
        if not 0 <= self.holdout < 1:
            raise ConfigError("holdout must be in [0, 1).")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative.")
        if Arch(self.arch) is Arch.SGC:
            raise ConfigError("SGC has no parameters to train.")


@dataclass(frozen=True, eq=False)
class TrainReport:
    """Outcome of a training run.

    :param epoch_losses: Mean training loss after each epoch.
    :type epoch_losses: List[float]
    :param best_epoch: 0-based epoch of the returned model.
    :type best_epoch: int
    :param stopped_early: Patience ran out before the last epoch.
    :type stopped_early: bool
    :param final_model: The model at the best epoch.
    :type final_model: GnnModel
    :param monitored_losses: The loss used for early stopping per epoch.
    :type monitored_losses: List[float]
    """

    epoch_losses: List[float]
    best_epoch: int
    stopped_early: bool
    final_model: GnnModel
    monitored_losses: List[float] = field(default_factory=list)

    def to_record(self) -> dict:
        """JSON shape of the report."""
        return {
            "epoch_losses": self.epoch_losses,
            "monitored_losses": self.monitored_losses,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "arch": self.final_model.arch.value,
            "layers": self.final_model.layers,
            "dim_in": self.final_model.dim_in,
            "dim_out": self.final_model.dim_out,
        }


def bpr_loss(score_pos, score_neg):
    """``-log sigmoid(score_pos - score_neg)`` in the stable softplus
    form ``log(1 + exp(-delta))``. Works elementwise on arrays.
    """
    return np.logaddexp(0.0, -(np.asarray(score_pos) - np.asarray(score_neg)))


def _sigmoid_neg(delta: np.ndarray) -> np.ndarray:
    """``sigmoid(-delta)`` without overflow."""
    return np.exp(-np.logaddexp(0.0, delta))


@dataclass(frozen=True, eq=False)
class TrainProblem:
    """Everything the loss needs, precomputed once.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param features: Node features, one row per node.
    :type features: np.ndarray
    :param steps: Unique step embeddings.
    :type steps: np.ndarray
    :param step_index: Step row of every triplet.
    :type step_index: np.ndarray
    :param positives: Positive node of every triplet.
    :type positives: np.ndarray
    :param negatives: Negative node of every triplet.
    :type negatives: np.ndarray
    """

    graph: TaskGraph
    features: np.ndarray
    steps: np.ndarray
    step_index: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    adjacency: NormalizedAdjacency = field(init=False)
    mean_features: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "adjacency", build_adjacency(self.graph))
        object.__setattr__(
            self, "mean_features", neighbor_mean(self.graph, self.features)
        )

    def __len__(self) -> int:
        return len(self.positives)

    @classmethod
    def build(cls, graph, features, triplets, step_embedder) -> "TrainProblem":
        """Embed the step texts of triplets once and index them.

        :param graph: The task graph.
        :type graph: TaskGraph
        :param features: Node features.
        :type features: np.ndarray
        :param triplets: Training triplets.
        :type triplets: Sequence[corpus.TrainTriplet]
        :param step_embedder: Provider of step embeddings.
        :type step_embedder: EmbeddingProvider
        :return: The problem, triplets in canonical order.
        :rtype: TrainProblem
        """
        ordered = sorted(
            triplets, key=lambda item: (item.step_text, item.positive, item.negative)
        )
        texts = sorted({item.step_text for item in ordered})
        rows = {text: row for row, text in enumerate(texts)}
        return cls(
            graph=graph,
            features=np.asarray(features, dtype=np.float64),
            steps=step_embedder.embed_texts(texts),
            step_index=np.array(
                [rows[item.step_text] for item in ordered], dtype=np.int64
            ),
            positives=np.array([item.positive for item in ordered], dtype=np.int64),
            negatives=np.array([item.negative for item in ordered], dtype=np.int64),
        )


def _forward(problem: TrainProblem, model: GnnModel):
    if model.arch is Arch.SAGE:
        w_self, w_neigh = model.weights
        return problem.features @ w_self + problem.mean_features @ w_neigh, None
    cache = []
    h = problem.features
    last = len(model.weights) - 1
    for layer, weight in enumerate(model.weights):
        propagated = problem.adjacency.propagate(h)
        z = propagated @ weight
        cache.append((propagated, z))
        h = np.maximum(z, 0.0) if layer < last else z
    return h, cache


def batch_loss(
    problem: TrainProblem, model: GnnModel, batch: np.ndarray, l2: float = 0.0
) -> float:
    """Mean BPR loss of a batch plus the weight decay term."""
    h, _ = _forward(problem, model)
    steps = problem.steps[problem.step_index[batch]]
    margin = h[problem.positives[batch]] - h[problem.negatives[batch]]
    delta = np.einsum("bd,bd->b", margin, steps)
    loss = float(np.mean(bpr_loss(delta, 0.0)))
    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(weight**2)) for weight in model.weights)
    return loss


def loss_and_grad(
    problem: TrainProblem, model: GnnModel, batch: np.ndarray, l2: float = 0.0
) -> Tuple[float, List[np.ndarray]]:
    """Mean BPR loss of a batch and its analytic gradient.

    :param problem: The training problem.
    :type problem: TrainProblem
    :param model: The current model.
    :type model: GnnModel
    :param batch: Triplet indices.
    :type batch: np.ndarray
    :param l2: Weight decay coefficient, defaults to 0.0
    :type l2: float, optional
    :return: The loss and one gradient per weight matrix.
    :rtype: Tuple[float, List[np.ndarray]]
    """
    h, cache = _forward(problem, model)
    positives = problem.positives[batch]
    negatives = problem.negatives[batch]
    steps = problem.steps[problem.step_index[batch]]
    delta = np.einsum("bd,bd->b", h[positives] - h[negatives], steps)
    loss = float(np.mean(bpr_loss(delta, 0.0)))

    coefficient = -_sigmoid_neg(delta) / len(batch)
    d_h = np.zeros_like(h)
    np.add.at(d_h, positives, coefficient[:, None] * steps)
    np.add.at(d_h, negatives, -coefficient[:, None] * steps)

    if model.arch is Arch.SAGE:
        grads = [problem.features.T @ d_h, problem.mean_features.T @ d_h]
    else:
        grads = [None] * len(model.weights)
        d_z = d_h
        for layer in range(len(model.weights) - 1, -1, -1):
            propagated, _ = cache[layer]
            grads[layer] = propagated.T @ d_z
            if layer:
                # Â is symmetric, so the backward product reuses propagate.
                d_prev = problem.adjacency.propagate(d_z @ model.weights[layer].T)
                d_z = d_prev * (cache[layer - 1][1] > 0)

    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(weight**2)) for weight in model.weights)
        grads = [grad + l2 * weight for grad, weight in zip(grads, model.weights)]
    return loss, grads


class Adam:
    """The Adam optimizer over a list of weight matrices.

    :param lr: Learning rate.
    :type lr: float
    """

    def __init__(
        self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(
        self, weights: Sequence[np.ndarray], grads: Sequence[np.ndarray]
    ) -> List[np.ndarray]:
        """Apply one update and return the new weights."""
        if self.m is None:
            self.m = [np.zeros_like(weight) for weight in weights]
            self.v = [np.zeros_like(weight) for weight in weights]
        self.t += 1
        updated = []
        for index, (weight, grad) in enumerate(zip(weights, grads)):
            self.m[index] = self.beta1 * self.m[index] + (1 - self.beta1) * grad
            self.v[index] = self.beta2 * self.v[index] + (1 - self.beta2) * grad**2
            m_hat = self.m[index] / (1 - self.beta1**self.t)
            v_hat = self.v[index] / (1 - self.beta2**self.t)
            updated.append(weight - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


def init_model(arch, layers: int, dim_in: int, dim_out: int, seed: int) -> GnnModel:
    """A model with scaled uniform weights ``U(-a, a)``,
    ``a = sqrt(6 / (fan_in + fan_out))``.

    :param arch: ``sage`` or ``gcn``.
    :type arch: Arch
    :param layers: Layer count.
    :type layers: int
    :param dim_in: Input dimension.
    :type dim_in: int
    :param dim_out: Output dimension.
    :type dim_out: int
    :param seed: Init seed.
    :type seed: int
    :return: The model.
    :rtype: GnnModel
    """
    arch = Arch(arch)
    rng = np.random.default_rng(seed)
    weights = []
    for rows, cols in weight_shapes(arch, layers, dim_in, dim_out):
        bound = np.sqrt(6.0 / (rows + cols))
        weights.append(rng.uniform(-bound, bound, size=(rows, cols)))
    return GnnModel(arch, layers, dim_in, dim_out, tuple(weights))


def grad_check(
    problem: TrainProblem,
    model: GnnModel,
    batch: np.ndarray,
    epsilon: float = 1e-4,
    gradient: Optional[Callable] = None,
) -> float:
    """Largest relative error between an analytic gradient and central
    finite differences, over every weight.

    :param problem: The training problem.
    :type problem: TrainProblem
    :param model: The model to check at.
    :type model: GnnModel
    :param batch: Triplet indices.
    :type batch: np.ndarray
    :param epsilon: Finite difference step, defaults to 1e-4
    :type epsilon: float, optional
    :param gradient: Gradient function with the signature of
        :func:`loss_and_grad`, defaults to :func:`loss_and_grad`
    :type gradient: Callable, optional
    :return: ``max |a - n| / max(|a|, |n|, floor)``.
    :rtype: float
    """
    gradient = gradient or loss_and_grad
    _, analytic = gradient(problem, model, batch)
    worst = 0.0
    for index, weight in enumerate(model.weights):
        for position in np.ndindex(weight.shape):
            shifted = [item.copy() for item in model.weights]
            shifted[index][position] = weight[position] + epsilon
            plus = batch_loss(problem, model.with_weights(shifted), batch)
            shifted[index][position] = weight[position] - epsilon
            minus = batch_loss(problem, model.with_weights(shifted), batch)
            numeric = (plus - minus) / (2 * epsilon)
            value = float(analytic[index][position])
            scale = max(abs(value), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, abs(value - numeric) / scale)
    return worst


def _mean_loss(problem, model, indices, batch_size, l2) -> float:
    total = 0.0
    for start in range(0, len(indices), batch_size):
        batch = indices[start : start + batch_size]
        total += batch_loss(problem, model, batch, l2) * len(batch)
    return total / len(indices)


def train_model(
    graph: TaskGraph,
    node_features: np.ndarray,
    triplets,
    step_embedder,
    cfg: TrainConfig,
) -> TrainReport:
    """Train a scorer on BPR triplets.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param node_features: Node features, one row per node.
    :type node_features: np.ndarray
    :param triplets: Training triplets.
    :type triplets: Sequence[corpus.TrainTriplet]
    :param step_embedder: Provider of step embeddings.
    :type step_embedder: EmbeddingProvider
    :param cfg: Optimizer settings.
    :type cfg: TrainConfig
    :raises EmptyTriplets: No triplet was given.
    :raises NonFiniteLoss: The loss diverged.
    :return: The report with the model at the best epoch.
    :rtype: TrainReport
    """
    # pylint: disable=too-many-locals
    if not triplets:
        raise EmptyTriplets("Training needs at least one triplet.")
    problem = TrainProblem.build(graph, node_features, triplets, step_embedder)
    dim_in = problem.features.shape[1]
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg.arch, cfg.layers, dim_in, cfg.dim_out or dim_in, cfg.seed)

    order = rng.permutation(len(problem))
    held = int(round(len(problem) * cfg.holdout))
    if 0 < held < len(problem):
        holdout, train = np.sort(order[:held]), np.sort(order[held:])
    else:
        holdout, train = None, np.arange(len(problem))
    logger.info(
        "Training %s on %s triplets, %s held out",
        model.arch.value,
        len(train),
        0 if holdout is None else len(holdout),
    )

    optimizer = Adam(cfg.lr)
    epoch_losses, monitored = [], []
    best_loss, best_epoch, best_model = np.inf, 0, model
    stale = 0
    stopped_early = False
    for epoch in range(cfg.epochs):
        shuffled = rng.permutation(train)
        for start in range(0, len(shuffled), cfg.batch_size):
            batch = shuffled[start : start + cfg.batch_size]
            loss, grads = loss_and_grad(problem, model, batch, cfg.l2)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLoss(
                    f"Loss diverged at epoch {epoch} batch {start}: {loss}."
                )
            model = model.with_weights(optimizer.step(model.weights, grads))

        train_loss = _mean_loss(problem, model, train, cfg.batch_size, cfg.l2)
        watched = (
            train_loss
            if holdout is None
            else _mean_loss(problem, model, holdout, cfg.batch_size, cfg.l2)
        )
        if not np.isfinite(train_loss) or not np.isfinite(watched):
            raise NonFiniteLoss(f"Loss diverged at epoch {epoch}.")
        epoch_losses.append(train_loss)
        monitored.append(watched)
        logger.info("Epoch %s: loss %.6f, monitored %.6f", epoch, train_loss, watched)

        if watched < best_loss:
            best_loss, best_epoch, best_model = watched, epoch, model
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped_early = epoch < cfg.epochs - 1
                break

    return TrainReport(epoch_losses, best_epoch, stopped_early, best_model, monitored)
