"""This module defines file utilities shared by every artifact writer.
Every artifact is written to a temporary sibling first and moved over
the destination with :func:`os.replace`, so readers never observe a
partially written file.
"""
import json
import os
import tempfile
from typing import Any, Iterable, Iterator

from src.errors import IoError, ParseError


def write_bytes(path: str, data: bytes):
    """Atomically write binary content.

    :param path: The destination path.
    :type path: str
    :param data: The file content.
    :type data: bytes
    :raises IoError: The file could not be written.
    """
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        try:
            with os.fdopen(handle, "wb") as file:
                file.write(data)
            os.replace(temp_path, path)
        except BaseException:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise
    except OSError as error:
        raise IoError(f"Unable to write {path!r}: {error}") from error


def write_text(path: str, text: str):
    """Atomically write UTF-8 text.

    :param path: The destination path.
    :type path: str
    :param text: The file content.
    :type text: str
    """
    write_bytes(path, text.encode("utf-8"))


def dump_json(value: Any) -> str:
    """Deterministic JSON text: sorted keys, two-space indent and a
    trailing newline.

    :param value: A JSON compatible value.
    :type value: Any
    :return: The JSON text.
    :rtype: str
    """
    return json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str, value: Any):
    """Atomically write :func:`dump_json` output."""
    write_text(path, dump_json(value))


def write_jsonl(path: str, records: Iterable[Any]):
    """Atomically write one compact JSON object per line."""
    lines = (
        json.dumps(record, sort_keys=True, ensure_ascii=False) for record in records
    )
    write_text(path, "".join(f"{line}\n" for line in lines))


def read_json(path: str) -> Any:
    """Read a JSON file.

    :param path: The file path.
    :type path: str
    :raises ParseError: The file is missing or not valid JSON.
    :return: The decoded value.
    :rtype: Any
    """
    try:
        with open(path, encoding="utf-8") as file:
            return json.load(file)
    except OSError as error:
        raise ParseError(f"Unable to read {path!r}: {error}") from error
    except ValueError as error:
        raise ParseError(f"{path!r} is not valid JSON: {error}") from error


def read_jsonl(path: str) -> Iterator[Any]:
    """Iterate over the records of a JSONL file, skipping blank lines.

    :param path: The file path.
    :type path: str
    :raises ParseError: The file is missing or a line is not valid JSON.
    :return: The decoded records.
    :rtype: Iterator[Any]
    """
    try:
        with open(path, encoding="utf-8") as file:
            lines = file.readlines()
    except OSError as error:
        raise ParseError(f"Unable to read {path!r}: {error}") from error
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except ValueError as error:
            raise ParseError(f"{path!r} line {number} is not valid JSON.") from error
