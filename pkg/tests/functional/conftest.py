"""This module defines the fixtures of the __functional__ tests, which
drive the commands end to end through the command line runner over the
bundled fixture files.
"""
from typing import Callable

import pytest
import toml
from flask import Flask
from flask.testing import FlaskCliRunner

from tests.conftest import GRAPH_FILE, MOCK_FILE, SAMPLES_FILE


@pytest.fixture(name="runner")
def fixture_runner(app: Flask) -> FlaskCliRunner:
    """This fixture returns a command line test runner.

    :param app: The application instance.
    :type app: Flask
    :return: The test runner instance.
    :rtype: FlaskCliRunner
    """
    return app.test_cli_runner()


@pytest.fixture(name="manifest")
def fixture_manifest(tmp_path) -> Callable[..., str]:
    """This fixture returns a function writing a run manifest over the
    fixture files, with nested tables merged into the defaults.

    :return: The manifest writer, returning the manifest path.
    :rtype: Callable[..., str]
    """

    def write(name: str = "run.toml", **run) -> str:
        table = {
            "graph": GRAPH_FILE,
            "samples": SAMPLES_FILE,
            "strategy": "sgc",
            "seed": 0,
            "parallelism": 2,
            "out": str(tmp_path / "out"),
            "split": {"profile": "huggingface", "train": 4, "test": 5},
            "llm": {"transport": "mock", "mock_table": MOCK_FILE},
            "embedding": {"kind": "test_hash", "dim": 16},
        }
        for key, value in run.items():
            if isinstance(value, dict) and isinstance(table.get(key), dict):
                table[key] = {**table[key], **value}
            else:
                table[key] = value
        path = tmp_path / name
        path.write_text(toml.dumps({"RUN": table}), encoding="utf-8")
        return str(path)

    return write
