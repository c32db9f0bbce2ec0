"""Document cache: named collections of JSON objects with date-partitioned naming.

Two store implementations share one interface: an in-memory store for tests
and an append-only file store (one NDJSON file per collection plus a sidecar
count index) as the production default. Documents are kept as received except
for whitespace canonicalization; key order is never touched.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from datetime import date as Date
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .bus import Response
from .errors import BadRequestError, NotFoundError

STORE_FORMAT_VERSION = 1

STORE_FORMAT_TEXT = f"""\
store-format-version: {STORE_FORMAT_VERSION}

Layout: one directory per store root.
  <collection>.ndjson   one JSON object per line, in insertion (ordinal) order
  <collection>.idx      decimal document count, updated after each ingest batch

Collection names render as '<base>' (undated) or '<base>-yyyy-MM-dd' (dated).
Documents are stored as received apart from whitespace: surrounding whitespace
is trimmed, and a body containing raw line breaks is re-serialized compactly
(key order preserved) so every document occupies exactly one line.
"""


def render_collection_name(base: str, date: Date | None = None) -> str:
    """Render the unique collection name, ``base-yyyy-MM-dd`` when dated."""
    if not base:
        raise BadRequestError("collection base name must be non-empty")
    if date is None:
        return base
    return f"{base}-{date.isoformat()}"


def _normalize_document(body: str, ordinal: int) -> str:
    """Validate one document body and return its single-line stored form."""
    text = body.strip()
    try:
        parsed = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise BadRequestError(f"document {ordinal} is not valid JSON: {exc}") from None
    if not isinstance(parsed, dict):
        raise BadRequestError(f"document {ordinal} must be a JSON object, not {type(parsed).__name__}")
    if "\n" in text or "\r" in text:
        return json.dumps(parsed, separators=(",", ":"), ensure_ascii=False)
    return text


class MemoryStore:
    """Dict-backed store; collections are plain lists of document bodies."""

    def __init__(self):
        self._collections: dict[str, list[str]] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._mutex = threading.Lock()

    def _writer_lock(self, collection: str) -> threading.Lock:
        with self._mutex:
            return self._locks[collection]

    def exists(self, collection: str) -> bool:
        return collection in self._collections

    def ingest(self, collection: str, docs: Iterable[str]) -> int:
        with self._writer_lock(collection):
            bucket = self._collections.setdefault(collection, [])
            count = 0
            for body in docs:
                bucket.append(_normalize_document(body, len(bucket)))
                count += 1
            return count

    def fetch(self, collection: str) -> Iterator[str]:
        if collection not in self._collections:
            raise NotFoundError(f"unknown collection '{collection}'")
        return iter(list(self._collections[collection]))

    def count(self, collection: str) -> int:
        if collection not in self._collections:
            raise NotFoundError(f"unknown collection '{collection}'")
        return len(self._collections[collection])

    def collections(self) -> list[str]:
        return sorted(self._collections)


class FileStore:
    """Append-only file-per-collection store: ``<name>.ndjson`` + ``<name>.idx``.

    Writers are serialized per collection; readers may run during an ingest
    and observe a prefix of complete documents.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        marker = self.root / "STORE_FORMAT"
        if not marker.exists():
            marker.write_text(STORE_FORMAT_TEXT, encoding="utf-8")
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._mutex = threading.Lock()

    def _writer_lock(self, collection: str) -> threading.Lock:
        with self._mutex:
            return self._locks[collection]

    def _data_path(self, collection: str) -> Path:
        if not collection or collection.startswith(".") or any(c in collection for c in ("/", "\\", "\x00")):
            raise BadRequestError(f"collection name {collection!r} is not file-safe")
        return self.root / f"{collection}.ndjson"

    def _index_path(self, collection: str) -> Path:
        return self._data_path(collection).with_suffix(".idx")

    def exists(self, collection: str) -> bool:
        return self._data_path(collection).exists()

    def ingest(self, collection: str, docs: Iterable[str]) -> int:
        path = self._data_path(collection)
        with self._writer_lock(collection):
            existing = self.count(collection) if path.exists() else 0
            written = 0
            try:
                with path.open("a", encoding="utf-8") as fh:
                    for body in docs:
                        line = _normalize_document(body, existing + written)
                        fh.write(line + "\n")
                        fh.flush()
                        written += 1
            finally:
                self._index_path(collection).write_text(str(existing + written), encoding="utf-8")
            return written

    def _read_lines(self, collection: str) -> list[str]:
        path = self._data_path(collection)
        if not path.exists():
            raise NotFoundError(f"unknown collection '{collection}'")
        text = path.read_text(encoding="utf-8")
        if not text:
            return []
        complete = text.endswith("\n")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not complete and lines:
            lines.pop()  # drop a torn final line from an in-flight writer
        return lines

    def fetch(self, collection: str) -> Iterator[str]:
        return iter(self._read_lines(collection))

    def count(self, collection: str) -> int:
        index = self._index_path(collection)
        if index.exists():
            return int(index.read_text(encoding="utf-8").strip() or "0")
        return len(self._read_lines(collection))

    def collections(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.ndjson"))


class RequestNameRegistry:
    """Set of registered protocol names; duplicates are rejected."""

    def __init__(self):
        self._names: set[str] = set()
        self._lock = threading.Lock()

    def register(self, name: str) -> Response:
        if not name:
            return Response.of(400, "request name must be non-empty")
        with self._lock:
            if name in self._names:
                return Response.of(409, f"request name '{name}' already registered")
            self._names.add(name)
            return Response.ok()

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def names(self) -> list[str]:
        return sorted(self._names)


def extract_node(value: Any, path: Sequence[str | int]) -> Any:
    """Walk ``path`` through parsed JSON and return the node it lands on."""
    node = value
    for step in path:
        if isinstance(node, dict):
            key = str(step)
            if key not in node:
                raise NotFoundError(f"key '{key}' not found at path step")
            node = node[key]
        elif isinstance(node, list):
            try:
                index = int(step)
            except (TypeError, ValueError):
                raise BadRequestError(f"list index expected, got {step!r}") from None
            if not -len(node) <= index < len(node):
                raise NotFoundError(f"index {index} out of range (length {len(node)})")
            node = node[index]
        else:
            raise BadRequestError(f"path step {step!r} descends into a scalar")
    return node


def extract_path(doc: str, path: Sequence[str | int]) -> str:
    """Extract the scalar at ``path`` inside a JSON object, rendered as text."""
    if not path:
        raise BadRequestError("path must be non-empty")
    try:
        parsed = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise BadRequestError(f"document is not valid JSON: {exc}") from None
    node = extract_node(parsed, path)
    if isinstance(node, (dict, list)):
        raise BadRequestError("path terminates at a non-scalar value")
    if isinstance(node, str):
        return node
    return json.dumps(node)
