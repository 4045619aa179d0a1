"""This module defines the record of a single LLM round trip. Exchanges are
the unit of provenance and token accounting: every plan carries the
exchanges that produced it.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import Enum


class Transport(str, Enum):
    """How an exchange was obtained."""

    LIVE = "live"
    REPLAY = "replay"
    MOCK = "mock"


@dataclass(frozen=True)
class DecodingParams:
    """Decoding parameters sent with every prompt.

    :param temperature: Sampling temperature, defaults to 0.2
    :type temperature: float, optional
    :param max_tokens: Completion token budget, defaults to 1024
    :type max_tokens: int, optional
    """

    temperature: float = 0.2
    max_tokens: int = 1024

    def to_record(self) -> dict:
        """JSON shape of the parameters."""
        return asdict(self)


@dataclass(frozen=True)
class Usage:
    """Token usage reported for one exchange."""

    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("Token counts must be non-negative.")

    @property
    def total(self) -> int:
        """Prompt plus completion tokens."""
        return self.prompt_tokens + self.completion_tokens

    def to_record(self) -> dict:
        """JSON shape of the usage."""
        return asdict(self)


def exchange_key(prompt: str, params: DecodingParams) -> str:
    """The recording key of a prompt: SHA-256 of the canonical JSON of
    the prompt and its decoding parameters.

    :param prompt: The rendered prompt.
    :type prompt: str
    :param params: The decoding parameters.
    :type params: DecodingParams
    :return: The hex digest.
    :rtype: str
    """
    payload = json.dumps(
        {"prompt": prompt, "params": params.to_record()},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmExchange:
    """One prompt and its response.

    :param prompt: The rendered prompt.
    :type prompt: str
    :param params: The decoding parameters.
    :type params: DecodingParams
    :param response: The response text.
    :type response: str
    :param usage: The token usage.
    :type usage: Usage
    :param latency: Wall-clock seconds spent on the round trip.
    :type latency: float
    :param transport: The transport that answered.
    :type transport: Transport
    :param purpose: The prompt template name, used for call audits.
    :type purpose: str
    """

    prompt: str
    params: DecodingParams
    response: str
    usage: Usage
    latency: float = field(default=0.0, compare=False)
    transport: Transport = Transport.MOCK
    purpose: str = ""

    @property
    def key(self) -> str:
        """The recording key."""
        return exchange_key(self.prompt, self.params)

    def to_record(self) -> dict:
        """The recording file shape."""
        return {
            "key": self.key,
            "prompt": self.prompt,
            "params": self.params.to_record(),
            "response": self.response,
            "usage": self.usage.to_record(),
        }
