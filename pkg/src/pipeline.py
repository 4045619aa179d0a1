"""This module wires the building blocks into the runs the commands
execute: loading inputs, embedding, splitting, training, planning and
evaluating. Every function takes a validated :class:`RunConfig`.
"""
import logging
import os
import time
from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src import corpus, gnn, metrics
from src.errors import ConfigError
from src.models.gnn import GnnModel, load_weights, save_weights, sgc_model
from src.models.graph import TaskGraph, load_graph
from src.models.plan import Plan, PlanSample
from src.planner import PlanningContext, plan_request
from src.services.embedding import EmbeddingCache, EmbeddingProvider, build_provider
from src.services.storage import write_json, write_jsonl
from src.settings import RunConfig
from src.train import TrainReport, train_model

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.gnn"
TRAIN_REPORT_FILE = "train_report.json"
CACHE_FILE = "embeddings.emb"
PLANS_FILE = "plans.jsonl"
TIMING_FILE = "timing.json"
REPORT_FILES = {"json": "report.json", "csv": "report.csv", "markdown": "report.md"}


def node_texts(graph: TaskGraph) -> List[str]:
    """The text embedded for every node, in id order."""
    return [node.description or node.name for node in graph.nodes]


@dataclass
class Inputs:
    """The loaded inputs of a run.

    :param graph: The task graph.
    :type graph: TaskGraph
    :param samples: The samples, empty when the run names none.
    :type samples: List[PlanSample]
    :param provider: The embedding provider.
    :type provider: EmbeddingProvider
    :param features: Node description embeddings.
    :type features: np.ndarray
    """

    graph: TaskGraph
    samples: List[PlanSample]
    provider: EmbeddingProvider
    features: np.ndarray


def load_inputs(config: RunConfig, provider: EmbeddingProvider = None) -> Inputs:
    """Load the graph and samples and embed the node descriptions.

    :param config: The run configuration.
    :type config: RunConfig
    :param provider: The embedding provider, defaults to the configured
        one
    :type provider: EmbeddingProvider, optional
    :return: The inputs.
    :rtype: Inputs
    """
    profile = corpus.dataset_profile(config.profile)
    graph = load_graph(config.graph, profile.link_kind)
    samples = corpus.load_samples(config.samples, graph) if config.samples else []
    provider = provider or build_provider(config.embedding)
    features = provider.embed_texts(node_texts(graph))
    return Inputs(graph, samples, provider, features)


def split(
    config: RunConfig, samples: Sequence[PlanSample]
) -> Tuple[PlanSample, corpus.Split]:
    """The in-context example and the split of a run."""
    profile = corpus.dataset_profile(config.profile)
    return corpus.make_profile_split(
        profile, samples, config.seed, config.train_n, config.test_n
    )


def embed_cache(config: RunConfig, inputs: Inputs, path: str = None) -> str:
    """Embed the node descriptions and every sample step into a cache
    file.

    :param config: The run configuration.
    :type config: RunConfig
    :param inputs: The loaded inputs.
    :type inputs: Inputs
    :param path: The cache file, defaults to the configured one
    :type path: str, optional
    :raises ConfigError: The provider only reads a cache.
    :return: The cache path.
    :rtype: str
    """
    if config.embedding.kind == "file_cache":
        raise ConfigError("Embedding needs a computing provider, not a file cache.")
    path = path or config.embedding.cache or os.path.join(config.out, CACHE_FILE)
    steps = sorted({step for sample in inputs.samples for step in sample.steps})
    texts = list(dict.fromkeys(node_texts(inputs.graph) + steps))
    matrix = inputs.provider.embed_texts(texts)
    EmbeddingCache.build(texts, matrix).save(path)
    logger.info(
        "Cached %s embeddings of dimension %s in %s",
        len(texts),
        matrix.shape[1],
        path,
    )
    return path


def train(
    config: RunConfig, inputs: Inputs, train_samples: Sequence[PlanSample]
) -> TrainReport:
    """Train the configured architecture on the training samples.

    :param config: The run configuration.
    :type config: RunConfig
    :param inputs: The loaded inputs.
    :type inputs: Inputs
    :param train_samples: The training split.
    :type train_samples: Sequence[PlanSample]
    :raises EmptyTriplets: The split yields no triplet.
    :return: The training report.
    :rtype: TrainReport
    """
    cfg = config.train
    if config.strategy in ("sage", "gcn"):
        cfg = replace(cfg, arch=config.strategy)
    triplets = corpus.build_triplets(train_samples, inputs.graph, inputs.features)
    logger.info("Built %s triplets from %s samples", len(triplets), len(train_samples))
    return train_model(inputs.graph, inputs.features, triplets, inputs.provider, cfg)


def save_training(config: RunConfig, report: TrainReport) -> Tuple[str, str]:
    """Write the weights and the training report.

    :return: The weights and report paths.
    :rtype: Tuple[str, str]
    """
    weights = config.gnn.weights or os.path.join(config.out, WEIGHTS_FILE)
    save_weights(report.final_model, weights)
    report_path = os.path.join(config.out, TRAIN_REPORT_FILE)
    write_json(report_path, report.to_record())
    return weights, report_path


def scorer(config: RunConfig, inputs: Inputs, train_samples=()) -> Optional[GnnModel]:
    """The scoring model of a retrieval strategy.

    :param config: The run configuration.
    :type config: RunConfig
    :param inputs: The loaded inputs.
    :type inputs: Inputs
    :param train_samples: Used when the model is trained first,
        defaults to ()
    :type train_samples: Sequence[PlanSample], optional
    :return: The model, None for strategies that do not retrieve.
    :rtype: GnnModel, optional
    """
    if config.strategy == "sgc":
        return sgc_model(config.gnn.layers, inputs.features.shape[1])
    if not config.needs_weights:
        return None
    if config.gnn.train_first:
        report = train(config, inputs, train_samples)
        save_training(config, report)
        return report.final_model
    return load_weights(config.gnn.weights)


def node_embeddings(inputs: Inputs, model: Optional[GnnModel]) -> Optional[np.ndarray]:
    """Final node embeddings of a scorer, or the description embeddings
    when there is none.
    """
    if model is None:
        return inputs.features
    return gnn.forward(inputs.graph, inputs.features, model)


def context(
    config: RunConfig,
    inputs: Inputs,
    client,
    model=None,
    example=None,
    executor: Executor = None,
) -> PlanningContext:
    """The planning context of a run."""
    return PlanningContext(
        graph=inputs.graph,
        client=client,
        step_embedder=inputs.provider,
        node_embeddings=node_embeddings(inputs, model),
        search=config.search,
        example=example,
        fill=config.fill_parameters,
        executor=executor,
    )


def evaluate(
    config: RunConfig,
    ctx: PlanningContext,
    test: Sequence[PlanSample],
    executor: Executor = None,
) -> Tuple[metrics.Report, List[Plan]]:
    """Plan every test sample and score the plans, in sample order.

    :param config: The run configuration.
    :type config: RunConfig
    :param ctx: The planning context.
    :type ctx: PlanningContext
    :param test: The test samples.
    :type test: Sequence[PlanSample]
    :param executor: Plans samples concurrently, defaults to None
    :type executor: Executor, optional
    :raises ServiceError: An LLM call failed.
    :return: The report and the plans.
    :rtype: Tuple[metrics.Report, List[Plan]]
    """
    started = time.perf_counter()

    def run(sample: PlanSample) -> Plan:
        return plan_request(sample.request, config.strategy, ctx)

    plans = list(executor.map(run, test)) if executor else [run(item) for item in test]
    scores = [
        metrics.score_sample(plan, sample, ctx.graph)
        for plan, sample in zip(plans, test)
    ]
    report = metrics.aggregate(
        scores,
        strategy=config.strategy,
        model=config.llm.model or "",
        samples=test,
        wall_clock=time.perf_counter() - started,
        parse_failures=metrics.count_parse_failures(plans),
    )
    logger.info(
        "Evaluated %s samples with %s: n-F1 %.4f, l-F1 %.4f",
        len(test),
        config.strategy,
        report.means["n_f1"],
        report.means["l_f1"],
    )
    return report, plans


def write_evaluation(
    config: RunConfig,
    report: metrics.Report,
    plans: Sequence[Plan],
    test: Sequence[PlanSample],
) -> List[str]:
    """Write the reports, the timing figures and the plans.

    :return: The written paths.
    :rtype: List[str]
    """
    paths = [
        metrics.emit_report(report, fmt, os.path.join(config.out, name))
        for fmt, name in REPORT_FILES.items()
    ]
    paths.append(metrics.emit_timing(report, os.path.join(config.out, TIMING_FILE)))
    plans_path = os.path.join(config.out, PLANS_FILE)
    write_jsonl(
        plans_path,
        ({"id": sample.id, **plan.to_record()} for plan, sample in zip(plans, test)),
    )
    paths.append(plans_path)
    return paths
