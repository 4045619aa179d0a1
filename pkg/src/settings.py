"""This module defines the environment defaults of the planner and the
run configuration built from them. Endpoint addresses, model names and
keys are read from environment variables, which Flask loads from
:file:`.env` and :file:`.flaskenv` when python-dotenv is installed.

Set ``FLASK_TESTING`` or ``FLASK_DEBUG`` to select the testing or
development configuration; the release configuration is used otherwise.

Experiment runs are described by TOML manifests. A manifest is loaded on
top of the environment defaults through ``app.config.from_file`` and must
keep its settings under a ``[RUN]`` table, for example::

    [RUN]
    graph = "data/huggingface/graph.json"
    samples = "data/huggingface/data.jsonl"
    strategy = "sgc"

    [RUN.llm]
    transport = "replay"
    replay = "fixtures/huggingface.jsonl"

String values may reference environment variables with ``${NAME}``.
Command line flags override manifest values which override environment
defaults. :func:`load_run_config` merges the three layers into a
validated :class:`RunConfig`.
"""

import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from src.errors import ConfigError
from src.planner import STRATEGIES, SearchConfig
from src.train import TrainConfig


#: Transports understood by the LLM client.
TRANSPORTS = ("live", "replay", "mock")

#: Embedding providers understood by :func:`services.embedding.build_provider`.
EMBEDDERS = ("remote_service", "file_cache", "test_hash")


class BaseConfig(ABC):
    """This class initializes base configurations settings shared by
    every command. Use the following example code on the Flask
    application instance::

        app.config.from_object(...)

    .. note:: This class is an abstract class that does not specify the
        current application environment. Create subclasses that extends
        the :class:`BaseConfig` to override its base configurations for
        each environment type.
    """

    # pylint: disable=too-few-public-methods, invalid-name

    #: OpenAI-compatible chat endpoint root, e.g. ``https://host/v1``.
    LLM_BASE_URL = os.environ.get("LLM_BASE_URL", "https://api.openai.com/v1")

    #: Chat model identifier.
    LLM_MODEL = os.environ.get("LLM_MODEL", "gpt-3.5-turbo")

    #: API key sent as a bearer token.
    LLM_API_KEY = os.environ.get("LLM_API_KEY")

    #: JSONL file every exchange is appended to, unset to disable.
    LLM_RECORD = os.environ.get("LLM_RECORD")

    #: Requests per second allowed by the client rate limiter.
    LLM_RPS = float(os.environ.get("LLM_RPS", 2.0))

    #: Sampling temperature used for every planning prompt.
    LLM_TEMPERATURE = float(os.environ.get("LLM_TEMPERATURE", 0.2))

    #: Completion token budget per exchange.
    LLM_MAX_TOKENS = int(os.environ.get("LLM_MAX_TOKENS", 1024))

    #: Request timeout in seconds.
    LLM_TIMEOUT = float(os.environ.get("LLM_TIMEOUT", 60))

    #: OpenAI-compatible embeddings endpoint root.
    EMBEDDING_BASE_URL = os.environ.get(
        "EMBEDDING_BASE_URL", "http://localhost:8080/v1"
    )

    #: Embedding model identifier, an e5-class sentence encoder.
    EMBEDDING_MODEL = os.environ.get("EMBEDDING_MODEL", "intfloat/e5-large-v2")

    #: API key of the embeddings endpoint.
    EMBEDDING_API_KEY = os.environ.get("EMBEDDING_API_KEY")

    #: Texts sent per embeddings request.
    EMBEDDING_BATCH_SIZE = int(os.environ.get("EMBEDDING_BATCH_SIZE", 64))

    @property
    @abstractmethod
    def LLM_TRANSPORT(self):
        """This method is an abstract property declaring which transport
        the LLM client uses when a run does not choose one.

        :return: One of :data:`TRANSPORTS`.
        :rtype: str
        """

    @property
    @abstractmethod
    def EMBEDDER(self):
        """This method is an abstract property declaring the default
        embedding provider kind.

        :return: One of :data:`EMBEDDERS`.
        :rtype: str
        """

    @property
    def EMBEDDING_DIM(self):
        """The embedding dimension. Remote e5-large class encoders emit
        1024 values; the offline hash embedder defaults to 64.

        :return: The embedding dimension.
        :rtype: int
        """
        default = 1024 if self.EMBEDDER == "remote_service" else 64
        return int(os.environ.get("EMBEDDING_DIM", default))


class DebugConfig(BaseConfig):
    """This is a subclass of :class:`BaseConfig` where each base
    configuration is inherited. The class overrides the configurations
    for development environment.
    """

    #: Development runs use recorded exchanges unless told otherwise.
    LLM_TRANSPORT = "replay"

    #: Offline embedder for development.
    EMBEDDER = "test_hash"


class TestingConfig(BaseConfig):
    """This is a subclass of :class:`BaseConfig` where each base
    configuration is inherited. The class overrides the configurations
    for testing environment so no test can reach the network.
    """

    #: Application environment set to TESTING.
    TESTING = True

    #: Canned responses only.
    LLM_TRANSPORT = "mock"

    #: Deterministic offline embedder.
    EMBEDDER = "test_hash"

    #: No throttling in tests.
    LLM_RPS = 0.0

    #: Tests record only when a command asks for it.
    LLM_RECORD = None


class ReleaseConfig(BaseConfig):
    """This is a subclass of :class:`BaseConfig` where each base
    configuration is inherited. The class overrides the configurations
    for production environment.
    """

    #: Live endpoint.
    LLM_TRANSPORT = "live"

    #: Remote e5-class encoder.
    EMBEDDER = "remote_service"


def get_config():
    """Get application configuration dependent on the environmental
    variables set. The environmental variable ``FLASK_DEBUG`` should
    enable development environment while ``FLASK_TESTING`` enables the
    testing environment.

    :return: The application configuration.
    :rtype: BaseConfig
    """
    if os.environ.get("FLASK_TESTING"):
        return TestingConfig()
    if os.environ.get("FLASK_DEBUG"):
        return DebugConfig()
    return ReleaseConfig()


@dataclass(frozen=True)
class LlmSettings:
    """LLM client settings of a run."""

    model: str
    base_url: str
    transport: str
    api_key: Optional[str] = field(default=None, repr=False)
    record: Optional[str] = None
    replay: Optional[str] = None
    mock_table: Optional[str] = None
    rps: float = 0.0
    temperature: float = 0.2
    max_tokens: int = 1024
    timeout: float = 60.0


@dataclass(frozen=True)
class EmbeddingSettings:
    """Embedding provider settings of a run."""

    kind: str
    dim: int
    cache: Optional[str] = None
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key: Optional[str] = field(default=None, repr=False)
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class GnnSettings:
    """Retrieval scorer settings of a run."""

    layers: int = 1
    weights: Optional[str] = None
    train_first: bool = False


@dataclass(frozen=True)
class RunConfig:
    """A validated experiment run.

    :param graph: The task graph file.
    :type graph: str
    :param samples: The samples file, optional for ``plan``.
    :type samples: str
    :param strategy: One of :data:`planner.STRATEGIES`.
    :type strategy: str
    """

    # pylint: disable=too-many-instance-attributes

    graph: str
    samples: Optional[str]
    strategy: str
    llm: LlmSettings
    embedding: EmbeddingSettings
    gnn: GnnSettings
    search: SearchConfig
    train: TrainConfig
    seed: int = 0
    out: str = "runs"
    parallelism: int = 1
    profile: str = "huggingface"
    train_n: Optional[int] = None
    test_n: Optional[int] = None
    fill_parameters: bool = False

    @property
    def needs_weights(self) -> bool:
        """The strategy scores with a trained model.

        :return: The strategy is ``sage`` or ``gcn``.
        :rtype: bool
        """
        return self.strategy in ("sage", "gcn")


def interpolate(value: Any) -> Any:
    """Expand ``${NAME}`` environment references in every string of a
    nested manifest value.

    :param value: A manifest value.
    :type value: Any
    :raises ConfigError: A referenced variable is not set.
    :return: The value with references replaced.
    :rtype: Any
    """
    if isinstance(value, str):
        expanded = os.path.expandvars(value)
        if "${" in expanded:
            raise ConfigError(f"Unresolved environment reference in {value!r}.")
        return expanded
    if isinstance(value, Mapping):
        return {key: interpolate(item) for key, item in value.items()}
    if isinstance(value, list):
        return [interpolate(item) for item in value]
    return value


def _merge(base: Mapping, overrides: Mapping) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _require_file(path: Optional[str], what: str):
    if not path:
        raise ConfigError(f"The run configuration does not name a {what}.")
    if not os.path.isfile(path):
        raise ConfigError(f"The {what} {path!r} does not exist.")


def load_run_config(
    app_config: Mapping, overrides: Optional[Mapping] = None, command: str = "eval"
) -> RunConfig:
    """Merge the environment defaults, the ``[RUN]`` manifest table and
    command line overrides into a validated :class:`RunConfig`.

    :param app_config: The Flask application configuration.
    :type app_config: Mapping
    :param overrides: Values from command line flags, defaults to None
    :type overrides: Mapping, optional
    :param command: The command being configured, which decides the
        files that must exist, defaults to "eval"
    :type command: str, optional
    :raises ConfigError: A value is missing or invalid.
    :return: The run configuration.
    :rtype: RunConfig
    """
    # pylint: disable=too-many-locals
    run = _merge(interpolate(app_config.get("RUN", {})), overrides or {})
    llm = run.get("llm", {})
    emb = run.get("embedding", {})
    gnn = run.get("gnn", {})
    search = run.get("search", {})
    train = run.get("train", {})
    split = run.get("split", {})

    strategy = run.get("strategy", "sgc")
    if strategy not in STRATEGIES:
        raise ConfigError(f"Unknown strategy {strategy!r}.")
    transport = llm.get("transport", app_config.get("LLM_TRANSPORT", "live"))
    if transport not in TRANSPORTS:
        raise ConfigError(f"Unknown transport {transport!r}.")
    kind = emb.get("kind", app_config.get("EMBEDDER", "test_hash"))
    if kind not in EMBEDDERS:
        raise ConfigError(f"Unknown embedder {kind!r}.")

    try:
        config = RunConfig(
            graph=run.get("graph"),
            samples=run.get("samples"),
            strategy=strategy,
            llm=LlmSettings(
                model=llm.get("model", app_config.get("LLM_MODEL")),
                base_url=llm.get("base_url", app_config.get("LLM_BASE_URL")),
                transport=transport,
                api_key=llm.get("api_key", app_config.get("LLM_API_KEY")),
                record=llm.get("record"),
                replay=llm.get("replay"),
                mock_table=llm.get("mock_table"),
                rps=float(llm.get("rps", app_config.get("LLM_RPS", 0.0))),
                temperature=float(
                    llm.get("temperature", app_config.get("LLM_TEMPERATURE", 0.2))
                ),
                max_tokens=int(
                    llm.get("max_tokens", app_config.get("LLM_MAX_TOKENS", 1024))
                ),
                timeout=float(llm.get("timeout", app_config.get("LLM_TIMEOUT", 60))),
            ),
            embedding=EmbeddingSettings(
                kind=kind,
                dim=int(emb.get("dim", app_config.get("EMBEDDING_DIM", 64))),
                cache=emb.get("cache"),
                base_url=emb.get("base_url", app_config.get("EMBEDDING_BASE_URL")),
                model=emb.get("model", app_config.get("EMBEDDING_MODEL")),
                api_key=emb.get("api_key", app_config.get("EMBEDDING_API_KEY")),
                batch_size=int(
                    emb.get("batch_size", app_config.get("EMBEDDING_BATCH_SIZE", 64))
                ),
                seed=int(emb.get("seed", 0)),
            ),
            gnn=GnnSettings(
                layers=int(gnn.get("layers", 1)),
                weights=gnn.get("weights"),
                train_first=bool(gnn.get("train_first", False)),
            ),
            search=SearchConfig(**search),
            train=TrainConfig(**{"seed": int(run.get("seed", 0)), **train}),
            seed=int(run.get("seed", 0)),
            out=run.get("out", "runs"),
            parallelism=int(run.get("parallelism", os.cpu_count() or 1)),
            profile=split.get("profile", run.get("profile", "huggingface")),
            train_n=split.get("train"),
            test_n=split.get("test"),
            fill_parameters=bool(run.get("fill_parameters", False)),
        )
    except (TypeError, ValueError) as error:
        raise ConfigError(str(error)) from error

    _validate(config, command)
    return config


def _validate(config: RunConfig, command: str):
    if config.parallelism < 1:
        raise ConfigError("parallelism must be at least 1.")
    if command == "theory":
        return
    _require_file(config.graph, "graph file")
    if command in ("train", "eval"):
        _require_file(config.samples, "samples file")
    if config.embedding.kind == "file_cache" and command != "embed":
        _require_file(config.embedding.cache, "embedding cache")
    if command in ("plan", "eval"):
        if config.llm.transport == "replay":
            _require_file(config.llm.replay, "replay recording")
        if config.llm.transport == "mock":
            _require_file(config.llm.mock_table, "mock response table")
        if config.needs_weights and not config.gnn.train_first:
            _require_file(config.gnn.weights, "weights file")
