"""Shared fixtures: mock upstreams, running engines, and a raw socket client."""

from __future__ import annotations

import json
import socket
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

import pytest

from dataengine.config import PaginationMode, build_config
from dataengine.engine import Engine, EngineConfig
from dataengine.testkit import MockDataset, MockUpstream, page_envelope, seed_records
from dataengine.wire import END_LINE, HEARTBEAT_LINE

MODE_ROUTES = {
    PaginationMode.SINGLE: "/single",
    PaginationMode.URL: "/url",
    PaginationMode.INCREMENTAL: "/incremental",
    PaginationMode.STATIC: "/static",
}


def connector_entries(mode: PaginationMode, base_url: str, limit: int = 10, name: str | None = None) -> dict[str, str]:
    """Properties entries for one mode against the standard mock envelope."""
    entries = {
        "url.base": base_url,
        "mode": mode.value,
        "limit": str(limit),
        "records.path": "data",
    }
    if name:
        entries["name"] = name
    if mode is PaginationMode.URL:
        entries["cursor.path"] = "next.url"
    elif mode is PaginationMode.INCREMENTAL:
        entries["cursor.param"] = "page"
    elif mode is PaginationMode.STATIC:
        entries["cursor.param"] = "startTime"
        entries["cursor.path"] = "idx"
    return entries


def make_config(mode: PaginationMode, base_url: str, limit: int = 10, name: str = "test-proto"):
    return build_config(connector_entries(mode, base_url, limit, name), fallback_name=name)


def properties_text(entries: dict[str, str]) -> str:
    return "\n".join(f"{k}={v}" for k, v in entries.items()) + "\n"


def local_executor(datasets: list[MockDataset], base: str = "http://mock.local"):
    """In-process request executor backed by the testkit page logic; no sockets."""
    by_route = {d.route: d for d in datasets}
    calls: list[str] = []

    def execute(spec):
        calls.append(spec.url)
        parts = urlsplit(spec.url)
        dataset = by_route.get(parts.path)
        if dataset is None:
            return 404, json.dumps({"error": "unknown route"})
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        return 200, json.dumps(page_envelope(dataset, query, base))

    return execute, calls


@pytest.fixture
def upstream_factory():
    servers = []

    def factory(datasets: list[MockDataset]) -> MockUpstream:
        server = MockUpstream(datasets)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.stop()


@pytest.fixture
def engine_factory(tmp_path):
    engines = []
    roots = iter(range(1000))

    def factory(config_dir: Path | None = None, **overrides) -> Engine:
        store_root = overrides.pop("store_root", tmp_path / f"store-{next(roots)}")
        config = EngineConfig(store_root=store_root, config_dir=config_dir, **overrides)
        engine = Engine(config).start()
        engines.append(engine)
        return engine

    yield factory
    for engine in engines:
        engine.stop()


def write_configs(directory: Path, *entry_sets: dict[str, str]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for entries in entry_sets:
        name = entries.get("name", f"proto{len(list(directory.glob('*.properties')))}")
        (directory / f"{name}.properties").write_text(properties_text(entries), encoding="utf-8")
    return directory


class RawClient:
    """Minimal line-oriented socket client for driving the engine in tests."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self.key = self.read_line()

    def read_line(self) -> str:
        line = self.rfile.readline()
        if line == "":
            raise ConnectionError("connection closed")
        return line.rstrip("\n").rstrip("\r")

    def send_line(self, line: str):
        self.sock.sendall((line + "\n").encode("utf-8"))

    def read_stream(self) -> tuple[list[str], int]:
        """Read DATA lines until END; returns (data_lines, heartbeat_count)."""
        data, heartbeats = [], 0
        while True:
            line = self.read_line()
            if line == END_LINE:
                return data, heartbeats
            if line == HEARTBEAT_LINE:
                heartbeats += 1
                continue
            data.append(line)

    def request(self, protocol: str, params: dict[str, str] | None = None) -> tuple[list[str], int]:
        fields = {"protocol": protocol, **(params or {})}
        tokens = ["SRC", "RQST"]
        for key, value in fields.items():
            tokens.extend([key, value])
        self.send_line("&&&".join(tokens))
        return self.read_stream()

    def close(self):
        # shutdown() sends FIN even while the makefile() wrapper holds the fd
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.rfile.close()
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


@pytest.fixture
def client_factory():
    clients = []

    def factory(engine: Engine, timeout: float = 30.0) -> RawClient:
        client = RawClient(engine._config.host, engine.port, timeout=timeout)
        clients.append(client)
        return client

    yield factory
    for client in clients:
        client.close()


def pytest_terminal_summary(terminalreporter):
    """Echo one line per acceptance criterion into the final summary."""
    try:
        from test_acceptance import CRITERION_RESULTS
    except ImportError:
        return
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, seconds in CRITERION_RESULTS:
        terminalreporter.write_line(f"ACCEPTANCE {name}: {status} ({seconds:.1f}s)")
