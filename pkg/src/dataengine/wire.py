"""Line-oriented wire protocol shared by the server and every client.

The byte-level contract lives in PROTOCOL.md; this module is its codec:
delimiter-separated request lines, one compact JSON object per DATA line,
whole-line heartbeat/end sentinels, and 32-hex destination keys. There is no
escaping mechanism: fields containing the delimiter or a line break are
rejected outright rather than silently corrupted.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .bus import DEFAULT_DELIMITER
from .errors import ConnectionLostError, EncodeError, FrameError, MalformedLineError

HEARTBEAT_LINE = "<<<heartbeat>>>"
END_LINE = "<<<end>>>"


class FrameKind(Enum):
    DATA = "data"
    HEARTBEAT = "heartbeat"
    END = "end"
    KEY = "key"


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    payload: str = ""


@dataclass(frozen=True)
class RequestLine:
    """Parsed request: receiver tag, process sub-tag, ordered parameters."""

    tag: str
    sub_tag: str
    params: Mapping[str, str] = field(default_factory=dict)


def _check_field(value: str, delimiter: str) -> str:
    if delimiter in value:
        raise EncodeError(f"field {value!r} contains the delimiter {delimiter!r}")
    if "\n" in value or "\r" in value:
        raise EncodeError(f"field {value!r} contains a line break")
    return value


def encode_request(
    tag: str,
    sub_tag: str,
    params: Mapping[str, str] | None = None,
    delimiter: str = DEFAULT_DELIMITER,
) -> str:
    """Render one request line: tag, sub-tag, then key/value pairs in order."""
    tokens = [_check_field(tag, delimiter), _check_field(sub_tag, delimiter)]
    for key, value in (params or {}).items():
        tokens.append(_check_field(str(key), delimiter))
        tokens.append(_check_field(str(value), delimiter))
    return delimiter.join(tokens)


def parse_request(line: str, delimiter: str = DEFAULT_DELIMITER) -> RequestLine:
    """Inverse of encode_request; unknown parameter keys are preserved."""
    tokens = line.split(delimiter)
    if len(tokens) < 2:
        raise MalformedLineError(f"expected at least tag{delimiter}sub-tag, got {line!r}")
    if (len(tokens) - 2) % 2 != 0:
        raise MalformedLineError(f"odd parameter token count in {line!r}")
    tag, sub_tag = tokens[0], tokens[1]
    if not tag or not sub_tag:
        raise MalformedLineError(f"empty tag or sub-tag in {line!r}")
    params = {tokens[i]: tokens[i + 1] for i in range(2, len(tokens), 2)}
    return RequestLine(tag, sub_tag, params)


def frame_document(doc: str | Mapping[str, Any]) -> str:
    """Render one JSON object as a single compact DATA line."""
    if isinstance(doc, str):
        try:
            parsed = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise FrameError(f"payload is not valid JSON: {exc}") from None
    else:
        parsed = doc
    if not isinstance(parsed, dict):
        raise FrameError(f"payload must be a JSON object, not {type(parsed).__name__}")
    return json.dumps(parsed, separators=(",", ":"), ensure_ascii=False)


def classify_line(line: str) -> Frame:
    """Classify one received line. Sentinel matches are whole-line only."""
    if line == HEARTBEAT_LINE:
        return Frame(FrameKind.HEARTBEAT)
    if line == END_LINE:
        return Frame(FrameKind.END)
    return Frame(FrameKind.DATA, line)


class FrameReader:
    """Pull frames off a line-oriented stream (any object with ``readline``).

    With ``first_line_is_key`` the first line is returned as a KEY frame, per
    the connection handshake. A lone ``\\r`` before the terminator is stripped
    for client friendliness.
    """

    def __init__(self, stream, first_line_is_key: bool = False):
        self._stream = stream
        self._expect_key = first_line_is_key

    def next_frame(self) -> Frame:
        raw = self._stream.readline()
        if raw == "":
            raise ConnectionLostError("stream closed before end sentinel")
        line = raw.rstrip("\n")
        if line.endswith("\r"):
            line = line[:-1]
        if self._expect_key:
            self._expect_key = False
            return Frame(FrameKind.KEY, line)
        return classify_line(line)


def generate_destination_key() -> str:
    """128-bit random token as 32 hex characters; no delimiter, no newline."""
    return secrets.token_hex(16)


class KeyRegistry:
    """Live destination keys with atomic insert-if-absent semantics."""

    def __init__(self):
        self._entries: dict[str, Any] = {}
        self._lock = threading.Lock()

    def issue(self, value: Any = None) -> str:
        with self._lock:
            while True:
                key = generate_destination_key()
                if key not in self._entries:
                    self._entries[key] = value
                    return key

    def release(self, key: str) -> bool:
        with self._lock:
            if key in self._entries:
                del self._entries[key]
                return True
            return False

    def get(self, key: str) -> Any:
        return self._entries.get(key)

    def values(self) -> list[Any]:
        with self._lock:
            return list(self._entries.values())

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)
