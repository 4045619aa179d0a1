"""This module defines unit test cases for the LLM client defined in
``services`` package in :file:`llm.py` module.
"""
import json

import pytest
from pytest_mock import MockerFixture as Mocker

from src.errors import ConfigError, ParseError, ReplayMiss, ServiceError
from src.models.exchange import DecodingParams, Transport
from src.services.llm import (
    ExchangeRecorder,
    LiveTransport,
    LlmClient,
    MockTransport,
    ReplayTransport,
    TokenBucket,
    build_client,
    chat,
)
from src.settings import LlmSettings


def _always(response: str) -> MockTransport:
    return MockTransport([{"match": [], "response": response}])


class TestMockTransport:
    """Test :class:`MockTransport` class."""

    def test_first_match_wins(self):
        """Every fragment must occur and the first entry wins."""
        client = LlmClient(
            MockTransport(
                [
                    {"match": ["alpha", "beta"], "response": "both"},
                    {"match": "alpha", "response": "one"},
                    {"match": [], "response": "any"},
                ]
            )
        )
        assert client.chat("alpha beta").response == "both"
        assert client.chat("alpha").response == "one"
        assert client.chat("gamma").response == "any"

    def test_usage_counts_whitespace_tokens(self):
        """Usage approximates tokens by whitespace splitting."""
        exchange = LlmClient(_always("a b")).chat("x y z")
        usage = exchange.usage
        assert (usage.prompt_tokens, usage.completion_tokens) == (3, 2)
        assert exchange.transport is Transport.MOCK

    def test_miss(self):
        """Unmatched prompts miss."""
        with pytest.raises(ReplayMiss):
            LlmClient(MockTransport([{"match": "alpha", "response": "x"}])).chat("beta")

    def test_fixture_table(self, mock_client: LlmClient):
        """The fixture table loads."""
        assert len(mock_client.transport.table) > 10


class TestRecordReplay:
    """Test :class:`ExchangeRecorder` and :class:`ReplayTransport` classes."""

    def test_replay_recording(self, tmp_path):
        """Recorded exchanges replay identically."""
        path = str(tmp_path / "record.jsonl")
        recorder = ExchangeRecorder()
        recorder.start(path)
        client = LlmClient(_always("answer"), recorder=recorder)
        recorded = client.chat("question", purpose="steps_only")
        recorder.stop()

        replay = LlmClient(ReplayTransport.from_file(path))
        replayed = replay.chat("question")
        assert replayed.response == recorded.response
        assert replayed.usage == recorded.usage
        assert replayed.key == recorded.key
        assert replayed.transport is Transport.REPLAY

    def test_replay_miss_other_params(self, tmp_path):
        """Replay keys include the decoding parameters."""
        path = str(tmp_path / "record.jsonl")
        recorder = ExchangeRecorder()
        recorder.start(path)
        LlmClient(_always("x"), recorder=recorder).chat("q")
        replay = LlmClient(ReplayTransport.from_file(path))
        with pytest.raises(ReplayMiss):
            replay.chat("q", params=DecodingParams(temperature=0.0))

    @pytest.mark.parametrize(
        "line", ['{"response": "x"}', '{"key": "abc"}', '["abc", "x"]']
    )
    def test_malformed_recording(self, tmp_path, line):
        """Records without a key or a response are data errors."""
        path = tmp_path / "record.jsonl"
        path.write_text(f"{line}\n", encoding="utf-8")
        with pytest.raises(ParseError) as error:
            ReplayTransport.from_file(str(path))
        assert error.value.exit_code == 3

    def test_start_truncates(self, tmp_path):
        """Starting a recording empties the file."""
        path = tmp_path / "record.jsonl"
        path.write_text("old\n", encoding="utf-8")
        ExchangeRecorder().start(str(path))
        assert path.read_text(encoding="utf-8") == ""

    def test_stopped_recorder_ignores(self, tmp_path):
        """A stopped recorder writes nothing."""
        recorder = ExchangeRecorder()
        assert not recorder.enabled
        client = LlmClient(_always("x"), recorder=recorder)
        client.chat("q")
        assert not list(tmp_path.iterdir())


class TestLiveTransport:
    """Test :class:`LiveTransport` class."""

    def test_chat(self, mocker: Mocker):
        """The OpenAI-compatible payload and answer."""
        post = mocker.patch(
            "src.services.llm.post_json",
            return_value={
                "choices": [{"message": {"content": "hello"}}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 1},
            },
        )
        limiter = mocker.MagicMock()
        client = LlmClient(LiveTransport("https://host/v1/", "model"), limiter=limiter)
        exchange = client.chat("hi", DecodingParams(0.0, 10))
        assert exchange.response == "hello"
        assert exchange.usage.total == 8
        limiter.acquire.assert_called_once()
        url, payload = post.call_args.args[1:3]
        assert url == "https://host/v1/chat/completions"
        assert payload["messages"] == [{"role": "user", "content": "hi"}]
        assert payload["temperature"] == 0.0

    def test_malformed(self, mocker: Mocker):
        """Answers without choices are service errors."""
        mocker.patch("src.services.llm.post_json", return_value={"choices": []})
        with pytest.raises(ServiceError):
            LlmClient(LiveTransport("https://host", "model")).chat("hi")


class TestClient:
    """Test client helpers."""

    def test_chat_function(self):
        """The module level helper uses the client defaults."""
        client = LlmClient(_always("x"), DecodingParams(0.5))
        assert chat(client, "q").params == DecodingParams(0.5)

    def test_mock_skips_limiter(self, mocker: Mocker):
        """Offline transports are not throttled."""
        limiter = mocker.MagicMock()
        LlmClient(_always("x"), limiter=limiter).chat("q")
        limiter.acquire.assert_not_called()

    def test_build_client_needs_fixture(self):
        """Offline transports need their file."""
        with pytest.raises(ConfigError):
            build_client(LlmSettings(model="m", base_url="u", transport="replay"))

    def test_build_client_mock(self, tmp_path):
        """The mock transport reads its table file."""
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"responses": [{"match": [], "response": "x"}]}))
        settings = LlmSettings(
            model="m", base_url="u", transport="mock", mock_table=str(path)
        )
        client = build_client(settings)
        assert client.chat("q").response == "x"
        assert client.params == DecodingParams(0.2, 1024)


class TestTokenBucket:
    """Test :class:`TokenBucket` class."""

    def test_disabled(self, mocker: Mocker):
        """A zero rate never sleeps."""
        sleep = mocker.patch("src.services.llm.time.sleep")
        bucket = TokenBucket(0.0)
        for _ in range(5):
            bucket.acquire()
        sleep.assert_not_called()

    def test_waits_for_tokens(self, mocker: Mocker):
        """An empty bucket sleeps until refilled."""
        readings = [0.0, 0.0, 0.0, 0.5]
        mocker.patch(
            "src.services.llm.time.monotonic",
            side_effect=lambda: readings.pop(0) if readings else 0.5,
        )
        sleep = mocker.patch("src.services.llm.time.sleep")
        bucket = TokenBucket(rate=2.0)
        bucket.acquire()
        bucket.acquire()
        assert sleep.call_count == 1
        assert sleep.call_args.args[0] == pytest.approx(0.5)
