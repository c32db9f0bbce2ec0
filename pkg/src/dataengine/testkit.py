"""Hermetic mock upstream: a local HTTP server speaking all four pagination shapes.

Each dataset is served at its own route with seeded records (strictly
increasing ``idx``), optional per-request latency, an optional scripted
failure ordinal, and per-route request counters readable at ``/__stats``
(reset via ``/__reset``). Routes and the response envelope are documented in
TESTKIT.md.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping
from urllib.parse import parse_qs, urlsplit

from .config import PaginationMode
from .errors import StartupError

PAGE_PARAM = "page"
STATIC_PARAM = "startTime"
URL_PARAM = "offset"


def seed_records(count: int, tag: str | None = None) -> list[dict[str, Any]]:
    """Deterministic records 0..count-1; ``tag`` marks ownership in isolation tests."""
    records = []
    for i in range(count):
        record: dict[str, Any] = {"idx": i, "value": f"record-{i:04d}"}
        if tag is not None:
            record["tag"] = tag
        records.append(record)
    return records


@dataclass
class MockDataset:
    """One seeded route: records, page size, pagination shape, scripted behavior."""

    route: str
    records: list[dict[str, Any]]
    mode: PaginationMode
    limit: int = 10
    latency: float = 0.0
    fail_at: int | None = None  # 1-based request ordinal that returns 500

    def __post_init__(self):
        indices = [r["idx"] for r in self.records]
        if indices != sorted(set(indices)):
            raise ValueError("records must carry strictly increasing idx values")


def page_envelope(dataset: MockDataset, query: Mapping[str, str], base_url: str) -> dict[str, Any]:
    """Mode-correct page for one request: ``{"data": [...], "next": {"url": ...}?}``."""
    records, limit = dataset.records, dataset.limit
    if dataset.mode is PaginationMode.SINGLE:
        return {"data": records}
    if dataset.mode is PaginationMode.INCREMENTAL:
        page = int(query.get(PAGE_PARAM, "1"))
        return {"data": records[(page - 1) * limit : page * limit]}
    if dataset.mode is PaginationMode.URL:
        offset = int(query.get(URL_PARAM, "0"))
        page = records[offset : offset + limit]
        envelope: dict[str, Any] = {"data": page}
        if len(page) == limit:
            envelope["next"] = {"url": f"{base_url}{dataset.route}?{URL_PARAM}={offset + limit}"}
        return envelope
    # STATIC: return records strictly after the cursor idx
    if STATIC_PARAM in query:
        cursor = int(query[STATIC_PARAM])
        page = [r for r in records if r["idx"] > cursor][:limit]
    else:
        page = records[:limit]
    return {"data": page}


@dataclass
class _Stats:
    counts: dict[str, int] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def bump(self, route: str) -> int:
        with self.lock:
            self.counts[route] = self.counts.get(route, 0) + 1
            return self.counts[route]

    def snapshot(self) -> dict[str, int]:
        with self.lock:
            return dict(self.counts)

    def reset(self):
        with self.lock:
            self.counts.clear()


class MockUpstream:
    """Threaded HTTP server hosting a set of MockDatasets on localhost."""

    def __init__(self, datasets: list[MockDataset], port: int = 0, host: str = "127.0.0.1"):
        self._datasets = {d.route: d for d in datasets}
        if len(self._datasets) != len(datasets):
            raise ValueError("dataset routes must be unique")
        self._stats = _Stats()
        self.host = host
        upstream = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):  # keep test output quiet
                pass

            def _reply(self, status: int, payload: dict[str, Any]):
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                parts = urlsplit(self.path)
                route = parts.path
                if route == "/__stats":
                    self._reply(200, upstream._stats.snapshot())
                    return
                if route == "/__reset":
                    upstream._stats.reset()
                    self._reply(200, {"reset": True})
                    return
                dataset = upstream._datasets.get(route)
                if dataset is None:
                    self._reply(404, {"error": f"unknown route {route}"})
                    return
                ordinal = upstream._stats.bump(route)
                if dataset.latency:
                    time.sleep(dataset.latency)
                if dataset.fail_at is not None and ordinal == dataset.fail_at:
                    self._reply(500, {"error": f"scripted failure at request {ordinal}"})
                    return
                query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
                self._reply(200, page_envelope(dataset, query, upstream.base_url))

        try:
            self._server = ThreadingHTTPServer((host, port), Handler)
        except OSError as exc:
            raise StartupError(f"cannot bind mock upstream on {host}:{port}: {exc}") from exc
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, name="mock-upstream", daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def url(self, route: str) -> str:
        return f"{self.base_url}{route}"

    def stats(self) -> dict[str, int]:
        return self._stats.snapshot()

    def reset(self):
        self._stats.reset()

    def total_requests(self) -> int:
        return sum(self._stats.snapshot().values())

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
