"""This module defines LLM access through three interchangeable
transports:

* ``live`` posts to an OpenAI-compatible ``/chat/completions`` endpoint,
  retrying rate limited and failed requests with exponential backoff.
* ``replay`` answers from a recording file keyed by the SHA-256 of the
  prompt and its decoding parameters. It never falls back to the network.
* ``mock`` answers from an in-memory table of canned responses and
  approximates token usage with whitespace token counts.

The :class:`LlmClient` is safe for concurrent use. A token bucket limits
the request rate and the recorder appends exchanges under a lock.
"""
import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import requests

from src.errors import (
    ERROR_REPLAY_MISS,
    ConfigError,
    ParseError,
    ReplayMiss,
    ServiceError,
)
from src.models.exchange import (
    DecodingParams,
    LlmExchange,
    Transport,
    Usage,
    exchange_key,
)
from src.services.http import MAX_RETRIES, post_json
from src.services.storage import read_json, read_jsonl

logger = logging.getLogger(__name__)


class TokenBucket:
    """A token bucket rate limiter. A non-positive rate disables it.

    :param rate: Tokens added per second, defaults to 0.0
    :type rate: float, optional
    :param capacity: Burst size, defaults to 1
    :type capacity: int, optional
    """

    def __init__(self, rate: float = 0.0, capacity: int = 1):
        self._lock = threading.Lock()
        self.configure(rate, capacity)

    def init_app(self, app):
        """Read ``LLM_RPS`` from the application configuration."""
        self.configure(app.config.get("LLM_RPS", 0.0))

    def configure(self, rate: float, capacity: int = 1):
        """Reset the bucket with a new rate."""
        with self._lock:
            self.rate = float(rate or 0.0)
            self.capacity = max(1, int(capacity))
            self._tokens = float(self.capacity)
            self._stamp = time.monotonic()

    def acquire(self):
        """Block until a token is available."""
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                refill = (now - self._stamp) * self.rate
                self._tokens = min(self.capacity, self._tokens + refill)
                self._stamp = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                delay = (1 - self._tokens) / self.rate
            time.sleep(delay)


class ExchangeRecorder:
    """Appends exchanges to a JSONL recording file. Disabled until
    :meth:`start` names a file.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.path: Optional[str] = None

    def init_app(self, app):
        """Start recording when ``LLM_RECORD`` is configured, stop
        otherwise."""
        self.stop()
        if app.config.get("LLM_RECORD"):
            self.start(app.config["LLM_RECORD"])

    def start(self, path: str):
        """Begin a fresh recording file.

        :param path: The recording file, truncated if present.
        :type path: str
        """
        with self._lock:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8"):
                pass
            self.path = path
        logger.info("Recording exchanges to %s", path)

    def stop(self):
        """Stop recording."""
        with self._lock:
            self.path = None

    @property
    def enabled(self) -> bool:
        """Whether a recording file is open."""
        return self.path is not None

    def record(self, exchange: LlmExchange):
        """Append one exchange."""
        with self._lock:
            if self.path is None:
                return
            line = json.dumps(exchange.to_record(), sort_keys=True, ensure_ascii=False)
            with open(self.path, "a", encoding="utf-8") as file:
                file.write(f"{line}\n")


class BaseTransport(ABC):
    """Base class of the transports."""

    kind: Transport

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: DecodingParams) -> Tuple[str, Usage]:
        """Answer a prompt.

        :param prompt: The rendered prompt.
        :type prompt: str
        :param params: The decoding parameters.
        :type params: DecodingParams
        :return: The response text and its usage.
        :rtype: Tuple[str, Usage]
        """
        with self._lock:
            self.calls += 1
        return self._complete(prompt, params)

    @abstractmethod
    def _complete(self, prompt: str, params: DecodingParams) -> Tuple[str, Usage]:
        """Transport specific answer."""


class LiveTransport(BaseTransport):
    """OpenAI-compatible chat completions over HTTP.

    :param base_url: Endpoint root, e.g. ``https://api.openai.com/v1``.
    :type base_url: str
    :param model: The chat model.
    :type model: str
    :param api_key: Bearer token, defaults to None
    :type api_key: str, optional
    :param timeout: Request timeout, defaults to 60.0
    :type timeout: float, optional
    :param session: HTTP session, defaults to a new one
    :type session: requests.Session, optional
    :param backoff: Backoff multiplier in seconds, defaults to 1.0
    :type backoff: float, optional
    """

    # pylint: disable=too-many-arguments
    kind = Transport.LIVE

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
        backoff: float = 1.0,
    ):
        super().__init__()
        self.url = f"{base_url.rstrip('/')}/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()
        self.backoff = backoff

    def _complete(self, prompt, params):
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        body = post_json(
            self.session,
            self.url,
            payload,
            api_key=self.api_key,
            timeout=self.timeout,
            retries=MAX_RETRIES,
            backoff=self.backoff,
        )
        try:
            text = body["choices"][0]["message"]["content"] or ""
            usage = body.get("usage") or {}
            return text, Usage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            )
        except (KeyError, IndexError, TypeError, ValueError) as error:
            raise ServiceError(f"Malformed chat answer from {self.url}.") from error


class ReplayTransport(BaseTransport):
    """Answers from recorded exchanges.

    :param records: Recording file records.
    :type records: Sequence[dict]
    :raises ParseError: A record lacks its key or response.
    """

    kind = Transport.REPLAY

    def __init__(self, records: Sequence[dict]):
        super().__init__()
        self.index: Dict[str, dict] = {}
        for position, record in enumerate(records):
            if not isinstance(record, dict) or not isinstance(record.get("key"), str):
                raise ParseError(f"Recorded exchange {position} has no key.")
            if not isinstance(record.get("response"), str):
                raise ParseError(f"Recorded exchange {position} has no response.")
            self.index.setdefault(record["key"], record)

    @classmethod
    def from_file(cls, path: str) -> "ReplayTransport":
        """Load a recording file."""
        return cls(list(read_jsonl(path)))

    def _complete(self, prompt, params):
        key = exchange_key(prompt, params)
        record = self.index.get(key)
        if record is None:
            raise ReplayMiss(ERROR_REPLAY_MISS.format(key=key))
        usage = record.get("usage", {})
        return record["response"], Usage(
            int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
        )


class MockTransport(BaseTransport):
    """Answers from canned responses. The first entry whose ``match``
    substrings all occur in the prompt wins.

    :param table: Entries ``{"match": [str, ...], "response": str}``.
    :type table: Sequence[dict]
    """

    kind = Transport.MOCK

    def __init__(self, table: Sequence[dict]):
        super().__init__()
        self.table: List[dict] = []
        for entry in table:
            match = entry.get("match", [])
            if isinstance(match, str):
                match = [match]
            self.table.append(
                {"match": list(match), "response": str(entry["response"])}
            )

    @classmethod
    def from_file(cls, path: str) -> "MockTransport":
        """Load a mock table file."""
        table = read_json(path)
        if isinstance(table, dict):
            table = table.get("responses", [])
        return cls(table)

    def _complete(self, prompt, params):
        for entry in self.table:
            if all(fragment in prompt for fragment in entry["match"]):
                response = entry["response"]
                return response, Usage(len(prompt.split()), len(response.split()))
        raise ReplayMiss(ERROR_REPLAY_MISS.format(key=exchange_key(prompt, params)))


class LlmClient:
    """Chat client over a transport.

    :param transport: The transport.
    :type transport: BaseTransport
    :param params: Default decoding parameters, defaults to
        :class:`DecodingParams`
    :type params: DecodingParams, optional
    :param limiter: Rate limiter, defaults to None
    :type limiter: TokenBucket, optional
    :param recorder: Exchange recorder, defaults to None
    :type recorder: ExchangeRecorder, optional
    """

    def __init__(
        self,
        transport: BaseTransport,
        params: Optional[DecodingParams] = None,
        limiter: Optional[TokenBucket] = None,
        recorder: Optional[ExchangeRecorder] = None,
    ):
        self.transport = transport
        self.params = params or DecodingParams()
        self.limiter = limiter
        self.recorder = recorder

    def chat(
        self, prompt: str, params: Optional[DecodingParams] = None, purpose: str = ""
    ) -> LlmExchange:
        """Send one prompt.

        :param prompt: The rendered prompt.
        :type prompt: str
        :param params: Decoding parameters, defaults to the client's
        :type params: DecodingParams, optional
        :param purpose: The template name, defaults to ""
        :type purpose: str, optional
        :raises ServiceError: The transport failed.
        :raises ReplayMiss: No recorded or canned answer exists.
        :return: The exchange.
        :rtype: LlmExchange
        """
        params = params or self.params
        if self.limiter is not None and self.transport.kind is Transport.LIVE:
            self.limiter.acquire()
        started = time.perf_counter()
        response, usage = self.transport.complete(prompt, params)
        exchange = LlmExchange(
            prompt=prompt,
            params=params,
            response=response,
            usage=usage,
            latency=time.perf_counter() - started,
            transport=self.transport.kind,
            purpose=purpose,
        )
        logger.debug(
            "Exchange %s (%s) used %s tokens in %.3fs",
            exchange.key[:12],
            purpose or "chat",
            usage.total,
            exchange.latency,
        )
        if self.recorder is not None:
            self.recorder.record(exchange)
        return exchange


def chat(
    client: LlmClient, prompt: str, params: Optional[DecodingParams] = None
) -> LlmExchange:
    """Send one prompt through a client."""
    return client.chat(prompt, params)


def build_client(settings, limiter=None, recorder=None, session=None) -> LlmClient:
    """Build the client named by run settings.

    :param settings: The LLM settings of a run.
    :type settings: settings.LlmSettings
    :param limiter: Rate limiter, defaults to None
    :type limiter: TokenBucket, optional
    :param recorder: Exchange recorder, defaults to None
    :type recorder: ExchangeRecorder, optional
    :param session: HTTP session for the live transport, defaults to None
    :type session: requests.Session, optional
    :raises ConfigError: The transport lacks its fixture.
    :return: The client.
    :rtype: LlmClient
    """
    if settings.transport == "replay":
        if not settings.replay:
            raise ConfigError("The replay transport needs a recording file.")
        transport = ReplayTransport.from_file(settings.replay)
    elif settings.transport == "mock":
        if not settings.mock_table:
            raise ConfigError("The mock transport needs a response table.")
        transport = MockTransport.from_file(settings.mock_table)
    else:
        transport = LiveTransport(
            settings.base_url,
            settings.model,
            api_key=settings.api_key,
            timeout=settings.timeout,
            session=session,
        )
    params = DecodingParams(settings.temperature, settings.max_tokens)
    return LlmClient(transport, params, limiter=limiter, recorder=recorder)
