"""This module defines unit test cases for the HTTP helper defined in
``services`` package in :file:`http.py` module.
"""
import pytest
import requests
from pytest_mock import MockerFixture as Mocker

from src.errors import ServiceError, ServiceUnavailable
from src.services.http import post_json


def _response(mocker: Mocker, status: int, body=None):
    response = mocker.MagicMock(spec=requests.Response)
    response.status_code = status
    response.ok = status < 400
    response.json.return_value = body
    return response


class TestPostJson:
    """Test :func:`post_json` function."""

    def test_success(self, mocker: Mocker):
        """The decoded body is returned and the key sent as a bearer."""
        session = mocker.MagicMock()
        session.post.return_value = _response(mocker, 200, {"ok": True})
        body = post_json(session, "http://host/v1/x", {"a": 1}, api_key="key")
        assert body == {"ok": True}
        headers = session.post.call_args.kwargs["headers"]
        assert headers["Authorization"] == "Bearer key"

    def test_retry_then_success(self, mocker: Mocker):
        """Rate limited requests are retried."""
        session = mocker.MagicMock()
        session.post.side_effect = [
            _response(mocker, 429),
            _response(mocker, 503),
            _response(mocker, 200, {"ok": True}),
        ]
        assert post_json(session, "http://host", {}, backoff=0) == {"ok": True}
        assert session.post.call_count == 3

    def test_retry_connection_error(self, mocker: Mocker):
        """Connection failures are retried."""
        session = mocker.MagicMock()
        session.post.side_effect = [
            requests.ConnectionError(),
            _response(mocker, 200, {}),
        ]
        assert post_json(session, "http://host", {}, backoff=0) == {}

    def test_retries_exhausted(self, mocker: Mocker):
        """Every attempt failing makes the service unavailable."""
        session = mocker.MagicMock()
        session.post.return_value = _response(mocker, 500)
        with pytest.raises(ServiceUnavailable):
            post_json(session, "http://host", {}, retries=2, backoff=0)
        assert session.post.call_count == 3

    def test_client_error_not_retried(self, mocker: Mocker):
        """Client errors fail at once."""
        session = mocker.MagicMock()
        session.post.return_value = _response(mocker, 401)
        with pytest.raises(ServiceError):
            post_json(session, "http://host", {}, backoff=0)
        assert session.post.call_count == 1

    def test_body_not_json(self, mocker: Mocker):
        """A body that is not JSON is a service error."""
        session = mocker.MagicMock()
        response = _response(mocker, 200)
        response.json.side_effect = ValueError("not json")
        session.post.return_value = response
        with pytest.raises(ServiceError):
            post_json(session, "http://host", {})
