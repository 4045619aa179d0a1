"""This module defines unit test cases for the scorer training defined in
:file:`train.py` module.
"""
import numpy as np
import pytest

from src import gnn
from src.corpus import TrainTriplet
from src.errors import ConfigError, EmptyTriplets
from src.models.gnn import Arch
from src.services.embedding import EmbeddingProvider
from src.train import (
    Adam,
    TrainConfig,
    TrainProblem,
    bpr_loss,
    grad_check,
    init_model,
    loss_and_grad,
    train_model,
)
from tests.conftest import (
    LookupEmbedder,
    make_graph,
    make_random_graph,
    make_separable_instance,
)

RING = 6


class OneHotEmbedder(EmbeddingProvider):
    """Embeds ``step-i`` as the i-th unit vector."""

    kind = "one_hot"

    def _embed(self, texts):
        return np.stack([np.eye(self.dim)[int(text.split("-")[1])] for text in texts])


@pytest.fixture(name="ring")
def fixture_ring():
    """A directed ring of six tasks."""
    names = [f"task{index}" for index in range(RING)]
    return make_graph(names, list(zip(names, names[1:] + names[:1])))


@pytest.fixture(name="triplets")
def fixture_triplets():
    """Step i prefers task i over every other task."""
    return [
        TrainTriplet(f"step-{positive}", positive, negative)
        for positive in range(RING)
        for negative in range(RING)
        if negative != positive
    ]


def test_bpr_loss_stable():
    """The loss is finite for large margins either way."""
    assert bpr_loss(0.0, 0.0) == pytest.approx(np.log(2))
    assert bpr_loss(1000.0, 0.0) == pytest.approx(0.0)
    assert bpr_loss(0.0, 1000.0) == pytest.approx(1000.0)


class TestGradients:
    """Test the analytic gradients."""

    @pytest.mark.parametrize("arch, layers", [("sage", 1), ("gcn", 1), ("gcn", 2)])
    def test_grad_check(self, ring, triplets, arch, layers):
        """Analytic and numeric gradients agree."""
        features = np.random.default_rng(0).standard_normal((RING, RING))
        problem = TrainProblem.build(ring, features, triplets, OneHotEmbedder(RING))
        model = init_model(arch, layers, RING, RING, seed=2)
        assert grad_check(problem, model, np.arange(len(problem))) < 1e-4

    @pytest.mark.parametrize("seed", range(50))
    def test_grad_check_random_batches(self, seed):
        """Analytic and numeric gradients agree on random small batches."""
        rng = np.random.default_rng(seed)
        size, dim_in, dim_out = (int(value) for value in rng.integers(2, 9, size=3))
        graph = make_random_graph(rng, size)
        features = rng.standard_normal((size, dim_in))
        embedder = LookupEmbedder(
            {f"step-{index}": rng.standard_normal(dim_out) for index in range(4)}
        )
        triplets = []
        for _ in range(int(rng.integers(1, 17))):
            positive, negative = rng.choice(size, size=2, replace=False)
            text = f"step-{rng.integers(4)}"
            triplets.append(TrainTriplet(text, int(positive), int(negative)))
        problem = TrainProblem.build(graph, features, triplets, embedder)
        arch, layers = [("sage", 1), ("gcn", 1), ("gcn", 2)][seed % 3]
        model = init_model(arch, layers, dim_in, dim_out, seed=seed)
        if layers == 2:
            hidden = problem.adjacency.propagate(features) @ model.weights[0]
            if np.min(np.abs(hidden)) < 1e-3:
                # Finite differences straddle the ReLU kink.
                model = init_model(arch, 1, dim_in, dim_out, seed=seed)
        batch = rng.choice(
            len(problem), size=int(rng.integers(1, len(problem) + 1)), replace=False
        )
        assert grad_check(problem, model, np.sort(batch)) < 1e-4

    def test_grad_check_detects_errors(self, ring, triplets):
        """A wrong gradient is caught."""
        features = np.random.default_rng(0).standard_normal((RING, RING))
        problem = TrainProblem.build(ring, features, triplets, OneHotEmbedder(RING))
        model = init_model("sage", 1, RING, RING, seed=2)

        def doubled(problem, model, batch):
            loss, grads = loss_and_grad(problem, model, batch)
            return loss, [2 * grad for grad in grads]

        batch = np.arange(len(problem))
        assert grad_check(problem, model, batch, gradient=doubled) > 0.1

    def test_l2_gradient(self, ring, triplets):
        """Weight decay adds its gradient."""
        features = np.eye(RING)
        problem = TrainProblem.build(ring, features, triplets, OneHotEmbedder(RING))
        model = init_model("sage", 1, RING, RING, seed=2)
        batch = np.arange(len(problem))
        _, plain = loss_and_grad(problem, model, batch)
        _, decayed = loss_and_grad(problem, model, batch, l2=0.5)
        np.testing.assert_allclose(decayed[0] - plain[0], 0.5 * model.weights[0])


class TestTrainModel:
    """Test :func:`train_model` function."""

    def test_sanity_ring(self, ring, triplets):
        """A separable ranking is learned to a small loss."""
        cfg = TrainConfig(lr=0.05, epochs=300, batch_size=64, patience=20, holdout=0.0)
        report = train_model(ring, np.eye(RING), triplets, OneHotEmbedder(RING), cfg)
        assert report.epoch_losses[-1] < 0.05
        assert report.epoch_losses[-1] < report.epoch_losses[0]
        assert report.final_model.arch is Arch.SAGE

    def test_separable_instance_default_settings(self):
        """Default settings rank unseen steps of a separable instance."""
        instance = make_separable_instance()
        report = train_model(
            instance.graph,
            instance.features,
            instance.triplets,
            instance.embedder,
            TrainConfig(),
        )
        h = gnn.forward(instance.graph, instance.features, report.final_model)
        predicted = np.argmax(instance.held_out @ h.T, axis=1)
        assert len(report.epoch_losses) <= 20
        assert np.mean(predicted == instance.labels) >= 0.95

    def test_deterministic(self, ring, triplets):
        """Equal seeds give equal weights whatever the triplet order."""
        cfg = TrainConfig(lr=0.01, epochs=3, batch_size=8, seed=4)
        embedder = OneHotEmbedder(RING)
        first = train_model(ring, np.eye(RING), triplets, embedder, cfg)
        second = train_model(ring, np.eye(RING), triplets[::-1], embedder, cfg)
        assert first.final_model.same_as(second.final_model)
        assert first.epoch_losses == second.epoch_losses

    def test_early_stopping(self, ring, triplets, mocker):
        """Training stops once the monitored loss stalls."""
        mocker.patch("src.train._mean_loss", return_value=1.0)
        cfg = TrainConfig(lr=0.01, epochs=10, patience=2)
        report = train_model(ring, np.eye(RING), triplets, OneHotEmbedder(RING), cfg)
        assert report.best_epoch == 0
        assert len(report.epoch_losses) == 3
        assert report.stopped_early

    def test_gcn_output_dimension(self, ring, triplets):
        """The output dimension is configurable."""
        features = np.hstack([np.eye(RING), np.zeros((RING, 2))])
        cfg = TrainConfig(arch="gcn", layers=2, epochs=1, dim_out=RING)
        report = train_model(ring, features, triplets, OneHotEmbedder(RING), cfg)
        assert report.to_record()["dim_in"] == RING + 2
        assert report.final_model.dim_out == RING

    def test_empty(self, ring):
        """Training needs triplets."""
        with pytest.raises(EmptyTriplets):
            train_model(ring, np.eye(RING), [], OneHotEmbedder(RING), TrainConfig())


class TestTrainConfig:
    """Test :class:`TrainConfig` class."""

    @pytest.mark.parametrize(
        "options",
        [
            {"lr": 0},
            {"epochs": 0},
            {"holdout": 1.0},
            {"l2": -1.0},
            {"arch": "sgc"},
            {"arch": "mlp"},
        ],
    )
    def test_invalid(self, options):
        """Invalid settings are configuration errors."""
        with pytest.raises((ConfigError, ValueError)):
            TrainConfig(**options)


def test_adam_first_step():
    """The first Adam step moves each weight by the learning rate."""
    updated = Adam(0.1).step([np.zeros(2)], [np.array([3.0, -0.5])])
    np.testing.assert_allclose(updated[0], [-0.1, 0.1], atol=1e-6)
