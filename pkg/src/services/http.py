"""This module defines the HTTP helper shared by the remote LLM and
embedding clients. Requests go through a :class:`requests.Session` and
are retried with exponential backoff on rate limiting (429), server
errors (5xx) and connection failures.
"""
import logging
from typing import Optional

import requests
from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.errors import ServiceError, ServiceUnavailable

logger = logging.getLogger(__name__)

#: Status codes worth retrying.
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

#: Retries after the first attempt.
MAX_RETRIES = 5


class RetryableStatus(Exception):
    """A response whose status code is worth retrying."""

    def __init__(self, response: requests.Response):
        super().__init__(f"HTTP {response.status_code}")
        self.response = response


def post_json(
    session: requests.Session,
    url: str,
    payload: dict,
    api_key: Optional[str] = None,
    timeout: float = 60.0,
    retries: int = MAX_RETRIES,
    backoff: float = 1.0,
) -> dict:
    """POST a JSON payload and decode the JSON answer.

    :param session: The HTTP session.
    :type session: requests.Session
    :param url: The endpoint.
    :type url: str
    :param payload: The request body.
    :type payload: dict
    :param api_key: Bearer token, defaults to None
    :type api_key: str, optional
    :param timeout: Request timeout in seconds, defaults to 60.0
    :type timeout: float, optional
    :param retries: Retries after the first attempt, defaults to 5
    :type retries: int, optional
    :param backoff: Exponential backoff multiplier in seconds, defaults
        to 1.0
    :type backoff: float, optional
    :raises ServiceUnavailable: Every attempt failed.
    :raises ServiceError: The service answered with a non-retryable
        error or a body that is not JSON.
    :return: The decoded body.
    :rtype: dict
    """
    # pylint: disable=too-many-arguments
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    def attempt() -> requests.Response:
        response = session.post(url, json=payload, headers=headers, timeout=timeout)
        if response.status_code in RETRY_STATUS:
            logger.warning("Retrying %s after HTTP %s", url, response.status_code)
            raise RetryableStatus(response)
        return response

    retrying = Retrying(
        stop=stop_after_attempt(retries + 1),
        wait=wait_exponential(multiplier=backoff, max=60),
        retry=retry_if_exception_type(
            (RetryableStatus, requests.ConnectionError, requests.Timeout)
        ),
        reraise=False,
    )
    try:
        response = retrying(attempt)
    except RetryError as error:
        raise ServiceUnavailable(
            f"{url} failed after {retries + 1} attempts."
        ) from error

    if not response.ok:
        raise ServiceError(f"{url} answered HTTP {response.status_code}.")
    try:
        return response.json()
    except ValueError as error:
        raise ServiceError(f"{url} answered with a body that is not JSON.") from error
