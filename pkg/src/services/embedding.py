"""This module defines the embedding providers and similarity primitives.

Three providers share the :class:`EmbeddingProvider` interface:

* ``remote_service`` calls an OpenAI-compatible ``/embeddings`` endpoint
  in batches and caches every answer for the lifetime of the provider.
* ``file_cache`` reads rows from an ``EMB1`` cache file, looked up by the
  SHA-256 of the text.
* ``test_hash`` expands a seeded 64-bit hash of the text through a
  counter-based generator and L2-normalizes the result, for offline use.

An embedding matrix is a ``(rows, dim)`` float64 :class:`numpy.ndarray`
with finite values.

The ``EMB1`` cache file holds the magic bytes, ``u32`` little-endian
rows and dimension, ``rows * dim`` little-endian ``f32`` values and a JSON
trailer mapping each row index to the SHA-256 hex of its source text.
"""
import hashlib
import json
import logging
import struct
import threading
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from src.errors import (
    CacheMiss,
    DataError,
    DimMismatch,
    EmbeddingShapeMismatch,
    ParseError,
    ServiceError,
    UnknownNode,
    ZeroVector,
)
from src.services.http import post_json
from src.services.storage import write_bytes

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"EMB1"
CACHE_HEADER = struct.Struct("<4sII")


def text_digest(text: str) -> str:
    """SHA-256 hex digest of a text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def check_matrix(matrix: np.ndarray, rows: Optional[int] = None) -> np.ndarray:
    """Validate an embedding matrix.

    :param matrix: The candidate matrix.
    :type matrix: np.ndarray
    :param rows: The expected row count, defaults to None
    :type rows: int, optional
    :raises EmbeddingShapeMismatch: The matrix is not 2-D, has the wrong
        row count or holds non-finite values.
    :return: The matrix as float64.
    :rtype: np.ndarray
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise EmbeddingShapeMismatch(f"Expected a matrix, got shape {matrix.shape}.")
    if rows is not None and matrix.shape[0] != rows:
        raise EmbeddingShapeMismatch(f"Expected {rows} rows, got {matrix.shape[0]}.")
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingShapeMismatch("Embedding values must be finite.")
    return matrix


class EmbeddingProvider(ABC):
    """Base class of every embedding provider.

    :param dim: The embedding dimension.
    :type dim: int
    """

    #: Provider kind, as named in run configurations.
    kind = ""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Embed a list of texts.

        :param texts: The texts, non-empty.
        :type texts: Sequence[str]
        :raises DataError: No text was given.
        :return: A ``(len(texts), dim)`` matrix.
        :rtype: np.ndarray
        """
        texts = list(texts)
        if not texts:
            raise DataError("No texts to embed.")
        matrix = check_matrix(self._embed(texts), rows=len(texts))
        if matrix.shape[1] != self.dim:
            raise EmbeddingShapeMismatch(
                f"{self.kind} returned dimension {matrix.shape[1]}, "
                f"expected {self.dim}."
            )
        return matrix

    def embed_one(self, text: str) -> np.ndarray:
        """Embed a single text as a vector."""
        return self.embed_texts([text])[0]

    @abstractmethod
    def _embed(self, texts: List[str]) -> np.ndarray:
        """Provider specific embedding of a non-empty list of texts."""


class HashEmbedder(EmbeddingProvider):
    """Deterministic offline embedder.

    :param dim: The embedding dimension, defaults to 64
    :type dim: int, optional
    :param seed: Hash seed, defaults to 0
    :type seed: int, optional
    """

    kind = "test_hash"

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__(dim)
        self.seed = int(seed)

    def vector(self, text: str) -> np.ndarray:
        """The unit vector of a text."""
        digest = hashlib.blake2b(
            text.encode("utf-8"),
            digest_size=8,
            key=self.seed.to_bytes(8, "little", signed=True),
        ).digest()
        key = int.from_bytes(digest, "little")
        generator = np.random.Generator(np.random.Philox(key=key))
        values = generator.standard_normal(self.dim)
        return values / np.linalg.norm(values)

    def _embed(self, texts: List[str]) -> np.ndarray:
        return np.stack([self.vector(text) for text in texts])


class RemoteEmbedder(EmbeddingProvider):
    """Client of an OpenAI-compatible embeddings endpoint. Answers are
    cached per text so repeated texts embed bit-identically.

    :param base_url: Endpoint root, e.g. ``http://localhost:8080/v1``.
    :type base_url: str
    :param model: The embedding model name.
    :type model: str
    :param dim: The expected embedding dimension.
    :type dim: int
    :param api_key: Bearer token, defaults to None
    :type api_key: str, optional
    :param batch_size: Texts per request, defaults to 64
    :type batch_size: int, optional
    :param timeout: Request timeout in seconds, defaults to 60.0
    :type timeout: float, optional
    :param session: HTTP session, defaults to a new one
    :type session: requests.Session, optional
    """

    # pylint: disable=too-many-arguments
    kind = "remote_service"

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: Optional[str] = None,
        batch_size: int = 64,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        super().__init__(dim)
        self.url = f"{base_url.rstrip('/')}/embeddings"
        self.model = model
        self.api_key = api_key
        self.batch_size = max(1, int(batch_size))
        self.timeout = timeout
        self.session = session or requests.Session()
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _embed(self, texts: List[str]) -> np.ndarray:
        with self._lock:
            missing = [text for text in dict.fromkeys(texts) if text not in self._cache]
        for start in range(0, len(missing), self.batch_size):
            batch = missing[start : start + self.batch_size]
            vectors = self._request(batch)
            with self._lock:
                for text, vector in zip(batch, vectors):
                    self._cache.setdefault(text, vector)
        with self._lock:
            return np.stack([self._cache[text] for text in texts])

    def _request(self, batch: List[str]) -> List[np.ndarray]:
        logger.debug("Embedding %s texts with %s", len(batch), self.model)
        body = post_json(
            self.session,
            self.url,
            {"model": self.model, "input": batch},
            api_key=self.api_key,
            timeout=self.timeout,
        )
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (KeyError, TypeError, ValueError) as error:
            raise ServiceError(
                f"Malformed embeddings answer from {self.url}."
            ) from error
        if len(vectors) != len(batch):
            raise ServiceError(
                f"{self.url} returned {len(vectors)} of {len(batch)} rows."
            )
        return vectors


class EmbeddingCache:
    """Precomputed embeddings keyed by source-text digest.

    :param matrix: The ``(rows, dim)`` matrix.
    :type matrix: np.ndarray
    :param digests: The SHA-256 hex of each row's source text.
    :type digests: Sequence[str]
    """

    def __init__(self, matrix: np.ndarray, digests: Sequence[str]):
        self.matrix = check_matrix(matrix, rows=len(digests))
        self.digests = list(digests)
        self.rows = {digest: row for row, digest in enumerate(self.digests)}

    @classmethod
    def build(cls, texts: Sequence[str], matrix: np.ndarray) -> "EmbeddingCache":
        """A cache for texts embedded in ``matrix`` row order."""
        return cls(matrix, [text_digest(text) for text in texts])

    @property
    def dim(self) -> int:
        """The embedding dimension."""
        return int(self.matrix.shape[1])

    def lookup(self, text: str) -> np.ndarray:
        """The cached row of a text.

        :param text: The source text.
        :type text: str
        :raises CacheMiss: The text was never cached.
        :return: The embedding vector.
        :rtype: np.ndarray
        """
        row = self.rows.get(text_digest(text))
        if row is None:
            raise CacheMiss(f"No cached embedding for {text[:60]!r}.")
        return self.matrix[row]

    def encode(self) -> bytes:
        """Serialize to the ``EMB1`` format."""
        rows, dim = self.matrix.shape
        trailer = json.dumps(
            {str(row): digest for row, digest in enumerate(self.digests)},
            sort_keys=True,
        )
        return (
            CACHE_HEADER.pack(CACHE_MAGIC, rows, dim)
            + np.ascontiguousarray(self.matrix, dtype="<f4").tobytes()
            + trailer.encode("utf-8")
        )

    @classmethod
    def decode(cls, data: bytes) -> "EmbeddingCache":
        """Read the ``EMB1`` format.

        :param data: The file content.
        :type data: bytes
        :raises ParseError: The content is not a valid cache file.
        :return: The cache.
        :rtype: EmbeddingCache
        """
        if len(data) < CACHE_HEADER.size:
            raise ParseError("Embedding cache is truncated.")
        magic, rows, dim = CACHE_HEADER.unpack_from(data)
        if magic != CACHE_MAGIC:
            raise ParseError("Embedding cache does not start with EMB1.")
        offset = CACHE_HEADER.size + 4 * rows * dim
        if len(data) < offset:
            raise ParseError("Embedding cache is truncated.")
        values = np.frombuffer(
            data, dtype="<f4", count=rows * dim, offset=CACHE_HEADER.size
        )
        try:
            trailer = json.loads(data[offset:].decode("utf-8"))
            digests = [trailer[str(row)] for row in range(rows)]
        except (ValueError, KeyError, TypeError) as error:
            raise ParseError("Embedding cache trailer is malformed.") from error
        return cls(values.reshape(rows, dim).astype(np.float64), digests)

    def save(self, path: str):
        """Atomically write the cache file."""
        write_bytes(path, self.encode())

    @classmethod
    def load(cls, path: str) -> "EmbeddingCache":
        """Read a cache file."""
        try:
            with open(path, "rb") as file:
                data = file.read()
        except OSError as error:
            raise ParseError(f"Unable to read {path!r}: {error}") from error
        return cls.decode(data)


class FileCacheEmbedder(EmbeddingProvider):
    """Provider answering from an :class:`EmbeddingCache`."""

    kind = "file_cache"

    def __init__(self, cache: EmbeddingCache):
        super().__init__(cache.dim)
        self.cache = cache

    def _embed(self, texts: List[str]) -> np.ndarray:
        return np.stack([self.cache.lookup(text) for text in texts])


def build_provider(
    settings, session: Optional[requests.Session] = None
) -> EmbeddingProvider:
    """Build the provider named by run settings.

    :param settings: The embedding settings of a run.
    :type settings: settings.EmbeddingSettings
    :param session: HTTP session for the remote provider, defaults to None
    :type session: requests.Session, optional
    :return: The provider.
    :rtype: EmbeddingProvider
    """
    if settings.kind == "file_cache":
        return FileCacheEmbedder(EmbeddingCache.load(settings.cache))
    if settings.kind == "remote_service":
        return RemoteEmbedder(
            settings.base_url,
            settings.model,
            settings.dim,
            api_key=settings.api_key,
            batch_size=settings.batch_size,
            session=session,
        )
    return HashEmbedder(settings.dim, settings.seed)


def dot_scores(
    h: np.ndarray, x: np.ndarray, candidate_ids: Sequence[int]
) -> List[Tuple[int, float]]:
    """Raw inner products between candidate rows and a query vector.

    :param h: The node embedding matrix.
    :type h: np.ndarray
    :param x: The query vector.
    :type x: np.ndarray
    :param candidate_ids: Rows to score, in output order.
    :type candidate_ids: Sequence[int]
    :raises DimMismatch: The dimensions differ.
    :raises UnknownNode: A candidate is not a row of ``h``.
    :return: ``(node id, score)`` pairs in candidate order.
    :rtype: List[Tuple[int, float]]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (h.shape[1],):
        raise DimMismatch(
            f"Query has shape {x.shape}, rows have dimension {h.shape[1]}."
        )
    ids = [int(item) for item in candidate_ids]
    for node in ids:
        if not 0 <= node < h.shape[0]:
            raise UnknownNode(f"Node id {node} is not an embedding row.")
    if not ids:
        return []
    scores = h[ids] @ x
    return [(node, float(score)) for node, score in zip(ids, scores)]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two non-zero vectors.

    :raises DimMismatch: The dimensions differ.
    :raises ZeroVector: Either vector is zero.
    :return: A value in ``[-1, 1]``.
    :rtype: float
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatch(f"Shapes {u.shape} and {v.shape} differ.")
    norm_u = np.linalg.norm(u)
    norm_v = np.linalg.norm(v)
    if norm_u == 0 or norm_v == 0:
        raise ZeroVector("Cosine similarity is undefined for a zero vector.")
    return float(np.clip(np.dot(u, v) / (norm_u * norm_v), -1.0, 1.0))


def cosine_matrix(matrix: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows.

    :raises ZeroVector: A row is zero.
    :return: A ``(rows, rows)`` matrix.
    :rtype: np.ndarray
    """
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("Cosine similarity is undefined for a zero vector.")
    unit = matrix / norms[:, None]
    return np.clip(unit @ unit.T, -1.0, 1.0)
