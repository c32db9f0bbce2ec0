"""The assembled data engine: a multi-tenant socket service on a router bus.

Six routers cooperate on one registry: OUT owns client connections and frame
output, SRC owns the protocol name registry and the cache-or-fetch decision,
ESH executes pull-based HTTP protocols, LSH owns push-based live streams, ENG
reports engine status, and LOG sinks structured events. Every inter-component
call travels the bus as a Packet, so the standard request flow is observable
as a trace of (sender, tag, sub-tag) edges.

Request flow: a client line is parsed and dispatched to its (tag, sub-tag);
SRC/RQST validates and enqueues a job; the job streams each (per-date)
collection from the store, fetching it from the upstream first on a cache
miss; all frames go to the job's destination key, END closes the stream.
Failures are reported in-band as a single Response document frame before END.
"""

from __future__ import annotations

import itertools
import json
import logging
import select
import socket
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date as Date
from enum import Enum
from pathlib import Path
from typing import Mapping

import requests

from .bus import (
    DEFAULT_DELIMITER,
    INTERNAL_ERROR,
    OK,
    STATUS_MESSAGES,
    Packet,
    Response,
    Router,
    RouterRegistry,
)
from .config import ConnectorConfig, load_config_dir
from .connector import (
    HttpRequestSpec,
    LiveStreamHub,
    iterate_dates,
    paginate,
    parse_date,
)
from .errors import (
    BadRequestError,
    ConnectionLostError,
    EngineError,
    FrameError,
    MalformedLineError,
    NotFoundError,
    StartupError,
)
from .storage import FileStore, RequestNameRegistry, render_collection_name
from .wire import (
    END_LINE,
    HEARTBEAT_LINE,
    KeyRegistry,
    frame_document,
    parse_request,
)

# Request parameters consumed by the engine itself; everything else is passed
# through to the connector as a runtime URL parameter.
CONTROL_PARAMS = frozenset({"protocol", "start_date", "end_date", "destination", "origin"})


@dataclass
class EngineConfig:
    store_root: str | Path
    config_dir: str | Path | None = None
    listen_port: int = 0
    host: str = "127.0.0.1"
    heartbeat_interval: float = 5.0
    delimiter: str = DEFAULT_DELIMITER
    worker_count: int = 4
    idle_timeout: float = 600.0
    http_timeout: float = 30.0
    log_file: str | Path | None = None

    def __post_init__(self):
        if self.heartbeat_interval <= 0:
            raise ValueError("heartbeat_interval must be > 0")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


class JobState(Enum):
    QUEUED = "QUEUED"
    FETCHING = "FETCHING"
    STREAMING = "STREAMING"
    DONE = "DONE"
    FAILED = "FAILED"


_STATE_ORDER = {
    JobState.QUEUED: 0,
    JobState.FETCHING: 1,
    JobState.STREAMING: 2,
    JobState.DONE: 3,
    JobState.FAILED: 3,
}


@dataclass
class RequestJob:
    """One accepted request: destination-keyed streaming of a protocol's documents."""

    id: int
    destination: str
    origin: str
    protocol: str
    params: dict[str, str]
    start_date: Date | None = None
    end_date: Date | None = None
    state: JobState = JobState.QUEUED
    # (collection name, date) pairs in streaming order; one per day when dated.
    plan: list[tuple[str, Date | None]] = field(default_factory=list)

    @property
    def collections(self) -> list[str]:
        return [name for name, _ in self.plan]


class ConnectionRecord:
    """One live client connection: key, socket, serialized outbound writes.

    The jobs lock makes the END sentinel and the live-job count change one
    atomic step, so no heartbeat can land after a connection's final END.
    """

    def __init__(self, sock: socket.socket):
        self.key = ""
        self._sock = sock
        self.connected_at = time.time()
        self.closed = False
        self.live_jobs = 0
        self.last_activity = time.monotonic()
        self._write_lock = threading.Lock()
        self._jobs_lock = threading.Lock()
        self._last_beat = 0.0

    def touch(self):
        self.last_activity = time.monotonic()

    def write_line(self, line: str):
        payload = (line + "\n").encode("utf-8")
        with self._write_lock:
            if self.closed:
                raise ConnectionLostError(f"connection {self.key} is closed")
            try:
                self._sock.sendall(payload)
            except OSError as exc:
                self.closed = True
                raise ConnectionLostError(str(exc)) from exc

    def job_started(self):
        with self._jobs_lock:
            self.live_jobs += 1
            if self.live_jobs == 1:
                self._last_beat = time.monotonic()

    def end_stream(self):
        """Write END and retire one live job in a single atomic step."""
        with self._jobs_lock:
            try:
                self.write_line(END_LINE)
            finally:
                self.live_jobs -= 1
                self.touch()

    def abort_job(self):
        with self._jobs_lock:
            self.live_jobs -= 1

    def maybe_heartbeat(self, interval: float, now: float):
        with self._jobs_lock:
            if self.closed or self.live_jobs <= 0:
                return
            if now - self._last_beat >= interval:
                try:
                    self.write_line(HEARTBEAT_LINE)
                except ConnectionLostError:
                    return
                self._last_beat = now

    def close(self):
        with self._write_lock:
            self.closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass


def response_frame(response: Response) -> str:
    """Render a Response as one in-band DATA line."""
    return frame_document({"code": response.code, "message": response.message, "data": response.data})


def _response_error(response: Response) -> EngineError:
    error = EngineError(response.message)
    error.code = response.code
    return error


class Engine:
    """Engine lifecycle owner: call start(), connect clients, call stop()."""

    def __init__(self, config: EngineConfig):
        self._config = config
        self._running = False
        self._listener: socket.socket | None = None
        self._pool: ThreadPoolExecutor | None = None
        self._threads: list[threading.Thread] = []
        self._keys = KeyRegistry()
        self._names = RequestNameRegistry()
        self._protocols: dict[str, ConnectorConfig] = {}
        self._store: FileStore | None = None
        self._hub: LiveStreamHub | None = None
        self._jobs: dict[int, RequestJob] = {}
        self._job_ids = itertools.count(1)
        self._jobs_mutex = threading.Lock()
        self._queues: dict[str, deque[RequestJob]] = {}
        self._active_destinations: set[str] = set()
        self._tls = threading.local()
        self.registry = RouterRegistry()
        self.bus_trace: deque[tuple[str, str, str]] = deque(maxlen=100_000)
        self.log_events: deque[tuple[str, str, str]] = deque(maxlen=10_000)
        self._logger = logging.getLogger("dataengine.engine")
        self._log_handler: logging.Handler | None = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Engine":
        config = self._config
        self._store = FileStore(config.store_root)
        self._hub = LiveStreamHub(self._store)
        if config.log_file is not None:
            handler = logging.FileHandler(config.log_file, encoding="utf-8")
            handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s [%(tag)s] %(message)s"))
            self._logger.addHandler(handler)
            self._logger.setLevel(logging.INFO)
            self._log_handler = handler

        if config.config_dir is not None:
            try:
                configs = load_config_dir(config.config_dir)
            except EngineError as exc:
                raise StartupError(str(exc)) from exc
            for connector_config in configs:
                if not self._names.register(connector_config.name).success:
                    raise StartupError(f"duplicate protocol name '{connector_config.name}'")
                self._protocols[connector_config.name] = connector_config

        self._build_routers()
        try:
            self._listener = socket.create_server((config.host, config.listen_port))
        except OSError as exc:
            raise StartupError(f"cannot bind {config.host}:{config.listen_port}: {exc}") from exc
        self._pool = ThreadPoolExecutor(max_workers=config.worker_count, thread_name_prefix="engine-job")
        self._running = True
        for name, target in (("engine-accept", self._accept_loop), ("engine-heartbeat", self._heartbeat_loop)):
            thread = threading.Thread(target=target, name=name, daemon=True)
            thread.start()
            self._threads.append(thread)
        self._log("INFO", "ENG", f"engine listening on {config.host}:{self.port} with {len(self._protocols)} protocol(s)")
        return self

    def stop(self):
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for record in self._keys.values():
            if isinstance(record, ConnectionRecord):
                record.close()
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        for thread in self._threads:
            thread.join(timeout=5)
        if self._log_handler is not None:
            self._logger.removeHandler(self._log_handler)
            self._log_handler.close()
            self._log_handler = None

    def __enter__(self) -> "Engine":
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

    @property
    def port(self) -> int:
        assert self._listener is not None, "engine not started"
        return self._listener.getsockname()[1]

    @property
    def store(self) -> FileStore:
        assert self._store is not None, "engine not started"
        return self._store

    def protocols(self) -> list[str]:
        return sorted(self._protocols)

    def jobs(self) -> dict[int, RequestJob]:
        return dict(self._jobs)

    def status(self) -> dict:
        by_state = {state.value: 0 for state in JobState}
        for job in self._jobs.values():
            by_state[job.state.value] += 1
        return {
            "protocols": len(self._protocols),
            "connections": len(self._keys),
            "jobs": by_state,
        }

    # -- router graph -------------------------------------------------------

    def _build_routers(self):
        routers = {tag: Router(tag, registry=self.registry) for tag in ("OUT", "SRC", "ESH", "LSH", "ENG", "LOG")}
        routers["SRC"].register_process("RQST", self._op_src_rqst)
        routers["ESH"].register_process("FETCH", self._op_esh_fetch)
        routers["OUT"].register_process("STREAM", self._op_out_stream)
        routers["OUT"].register_process("EMIT", self._op_out_emit)
        routers["LSH"].register_process("REGISTER", self._op_lsh_register)
        routers["LSH"].register_process("SUBSCRIBE", self._op_lsh_subscribe)
        routers["LSH"].register_process("PUSH", self._op_lsh_push)
        routers["ENG"].register_process("STATUS", self._op_eng_status)
        routers["LOG"].register_process("WRITE", self._op_log_write)

    def _send(self, sender: str, tag: str, sub_tag: str, data: Mapping[str, str]) -> Response:
        self.bus_trace.append((sender, tag, sub_tag))
        return self.registry.send(Packet(sender=sender, tag=tag, sub_tag=sub_tag, data=data))

    def _log(self, level: str, sender: str, message: str):
        self._send(sender, "LOG", "WRITE", {"level": level, "message": message})

    # -- router processes ---------------------------------------------------

    def _op_log_write(self, packet: Packet) -> Response:
        level = packet.data.get("level", "INFO")
        message = packet.data.get("message", "")
        self.log_events.append((level, packet.sender, message))
        self._logger.log(
            getattr(logging, level, logging.INFO), message, extra={"tag": packet.sender}
        )
        return Response.ok()

    def _op_eng_status(self, packet: Packet) -> Response:
        return Response.ok(data=json.dumps(self.status()))

    def _op_src_rqst(self, packet: Packet) -> Response:
        data = packet.data
        protocol = data.get("protocol")
        if not protocol:
            return Response.of(400, "missing required parameter 'protocol'")
        if protocol not in self._names:
            return Response.of(404, f"unknown protocol '{protocol}'")
        destination = data.get("destination", "")
        if destination not in self._keys:
            return Response.of(404, f"unknown destination key '{destination}'")
        start_text, end_text = data.get("start_date"), data.get("end_date")
        if (start_text is None) != (end_text is None):
            return Response.of(400, "start_date and end_date must be supplied together")
        start = end = None
        if start_text is not None and end_text is not None:
            try:
                start, end = parse_date(start_text), parse_date(end_text)
            except BadRequestError as exc:
                return Response.of(400, str(exc))
            if start > end:
                return Response.of(400, f"start_date {start} is after end_date {end}")

        job = RequestJob(
            id=next(self._job_ids),
            destination=destination,
            origin=data.get("origin", destination),
            protocol=protocol,
            params={k: v for k, v in data.items() if k not in CONTROL_PARAMS},
            start_date=start,
            end_date=end,
        )
        if start is not None and end is not None:
            job.plan = [(render_collection_name(protocol, day), day) for day in iterate_dates(start, end)]
        else:
            job.plan = [(render_collection_name(protocol), None)]
        self._log("INFO", "SRC", f"job {job.id} received: protocol '{protocol}', {len(job.plan)} collection(s), destination {destination}")
        self._submit(job)
        return Response.ok()

    def _op_esh_fetch(self, packet: Packet) -> Response:
        data = packet.data
        protocol = data.get("protocol", "")
        connector_config = self._protocols.get(protocol)
        if connector_config is None:
            return Response.of(404, f"unknown protocol '{protocol}'")
        day: Date | None = None
        if data.get("date"):
            try:
                day = Date.fromisoformat(data["date"])
            except ValueError:
                return Response.of(400, f"invalid date {data['date']!r}")
        runtime = {k[len("param."):]: v for k, v in data.items() if k.startswith("param.")}
        collection = render_collection_name(protocol, day)
        try:
            # Materialize the full run before ingesting so a failed fetch
            # never leaves a partially cached collection behind.
            documents = list(paginate(connector_config, self._http, runtime or None, date=day))
            count = self.store.ingest(collection, documents)
        except EngineError as exc:
            self._log("ERROR", "ESH", f"fetch into '{collection}' failed: {exc}")
            code = exc.code if exc.code in STATUS_MESSAGES else INTERNAL_ERROR
            return Response.of(code, str(exc))
        self._log("INFO", "ESH", f"fetched {count} document(s) into '{collection}'")
        return Response.ok(data=str(count))

    def _op_out_stream(self, packet: Packet) -> Response:
        destination = packet.data.get("destination", "")
        collection = packet.data.get("collection", "")
        record = self._keys.get(destination)
        if not isinstance(record, ConnectionRecord):
            return Response.of(404, f"unknown destination key '{destination}'")
        try:
            documents = self.store.fetch(collection)
        except NotFoundError as exc:
            return Response.of(404, str(exc))
        count = 0
        try:
            for document in documents:
                record.write_line(frame_document(document))
                count += 1
        except ConnectionLostError as exc:
            return Response.of(500, f"destination lost after {count} frame(s): {exc}")
        except FrameError as exc:
            return Response.of(500, str(exc))
        return Response.ok(data=str(count))

    def _op_out_emit(self, packet: Packet) -> Response:
        destination = packet.data.get("destination", "")
        record = self._keys.get(destination)
        if not isinstance(record, ConnectionRecord):
            return Response.of(404, f"unknown destination key '{destination}'")
        try:
            record.write_line(frame_document(packet.data.get("doc", "")))
        except FrameError as exc:
            return Response.of(400, str(exc))
        except ConnectionLostError as exc:
            return Response.of(500, str(exc))
        return Response.ok()

    def _op_lsh_register(self, packet: Packet) -> Response:
        assert self._hub is not None
        return self._hub.register_stream(packet.data.get("stream", ""))

    def _op_lsh_subscribe(self, packet: Packet) -> Response:
        assert self._hub is not None
        destination = packet.data.get("destination", "")
        if destination not in self._keys:
            return Response.of(404, f"unknown destination key '{destination}'")

        def sink(doc: str):
            response = self._send("LSH", "OUT", "EMIT", {"destination": destination, "doc": doc})
            if not response.success:
                raise ConnectionLostError(response.message)

        return self._hub.subscribe(packet.data.get("stream", ""), sink)

    def _op_lsh_push(self, packet: Packet) -> Response:
        assert self._hub is not None
        return self._hub.push(packet.data.get("stream", ""), packet.data.get("doc", ""))

    # -- job execution ------------------------------------------------------

    def _submit(self, job: RequestJob):
        assert self._pool is not None
        with self._jobs_mutex:
            self._jobs[job.id] = job
            queue = self._queues.setdefault(job.destination, deque())
            queue.append(job)
            if job.destination not in self._active_destinations:
                self._active_destinations.add(job.destination)
                self._pool.submit(self._job_worker, queue.popleft())

    def _job_worker(self, job: RequestJob):
        try:
            self._run_job(job)
        finally:
            with self._jobs_mutex:
                queue = self._queues.get(job.destination)
                if queue:
                    self._pool.submit(self._job_worker, queue.popleft())
                else:
                    self._active_destinations.discard(job.destination)

    @staticmethod
    def _advance(job: RequestJob, state: JobState):
        if _STATE_ORDER[state] >= _STATE_ORDER[job.state]:
            job.state = state

    def _run_job(self, job: RequestJob):
        destination = self._keys.get(job.destination)
        origin = self._keys.get(job.origin)
        targets: list[ConnectionRecord] = []
        for candidate in (destination, origin):
            if isinstance(candidate, ConnectionRecord) and all(candidate is not t for t in targets):
                targets.append(candidate)
        if destination is None:
            self._advance(job, JobState.FAILED)
            self._log("ERROR", "SRC", f"job {job.id}: destination key vanished before start")
            for record in targets:
                try:
                    record.write_line(response_frame(Response.of(404, "destination key vanished")))
                    record.write_line(END_LINE)
                except ConnectionLostError:
                    pass
            return

        for record in targets:
            record.job_started()
        remaining = list(targets)
        self._advance(job, JobState.FETCHING)
        try:
            for collection, day in job.plan:
                if self.store.exists(collection):
                    self._log("INFO", "SRC", f"job {job.id}: cache hit for '{collection}'")
                else:
                    self._log("INFO", "SRC", f"job {job.id}: cache miss for '{collection}', fetching upstream")
                    data = {"protocol": job.protocol}
                    if day is not None:
                        data["date"] = day.isoformat()
                    data.update({f"param.{k}": v for k, v in job.params.items()})
                    response = self._send("SRC", "ESH", "FETCH", data)
                    if not response.success:
                        raise _response_error(response)
                self._advance(job, JobState.STREAMING)
                response = self._send(
                    "SRC", "OUT", "STREAM", {"destination": job.destination, "collection": collection}
                )
                if not response.success:
                    raise _response_error(response)
            while remaining:
                record = remaining.pop()
                try:
                    record.end_stream()
                except ConnectionLostError:
                    pass
            self._advance(job, JobState.DONE)
            self._log("INFO", "SRC", f"job {job.id} completed: {len(job.plan)} collection(s) streamed")
        except Exception as exc:  # report in-band, never kill the worker
            self._advance(job, JobState.FAILED)
            self._log("ERROR", "SRC", f"job {job.id} failed: {exc}")
            code = getattr(exc, "code", INTERNAL_ERROR)
            response = Response.of(code if code in STATUS_MESSAGES else INTERNAL_ERROR, str(exc))
            while remaining:
                record = remaining.pop()
                try:
                    record.write_line(response_frame(response))
                except ConnectionLostError:
                    pass
                try:
                    record.end_stream()
                except ConnectionLostError:
                    pass

    def _http(self, spec: HttpRequestSpec) -> tuple[int, str]:
        session = getattr(self._tls, "session", None)
        if session is None:
            session = self._tls.session = requests.Session()
        response = session.get(spec.url, headers=dict(spec.headers), timeout=self._config.http_timeout)
        return response.status_code, response.text

    # -- socket front end ---------------------------------------------------

    def _accept_loop(self):
        assert self._listener is not None
        self._listener.settimeout(0.2)
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            record = ConnectionRecord(sock)
            record.key = self._keys.issue(record)
            try:
                record.write_line(record.key)
            except ConnectionLostError:
                self._keys.release(record.key)
                record.close()
                continue
            self._log("INFO", "OUT", f"connection {record.key} accepted")
            threading.Thread(
                target=self._reader_loop, args=(record,), name=f"engine-reader-{record.key[:8]}", daemon=True
            ).start()

    def _reader_loop(self, record: ConnectionRecord):
        sock = record._sock
        try:
            sock.settimeout(None)  # writes must block, never time out mid-stream
        except OSError:
            pass
        buffer = bytearray()
        try:
            while self._running and not record.closed:
                try:
                    ready, _, _ = select.select([sock], [], [], 1.0)
                except (OSError, ValueError):
                    break
                if not ready:
                    idle = time.monotonic() - record.last_activity
                    if record.live_jobs == 0 and idle > self._config.idle_timeout:
                        break
                    continue
                try:
                    chunk = sock.recv(65536)
                except OSError:
                    break
                if not chunk:
                    break
                buffer += chunk
                while True:
                    newline = buffer.find(b"\n")
                    if newline < 0:
                        break
                    raw = bytes(buffer[:newline])
                    del buffer[: newline + 1]
                    line = raw.decode("utf-8", errors="replace").rstrip("\r")
                    record.touch()
                    if line:
                        self._handle_request(line, record)
        finally:
            self._keys.release(record.key)
            record.close()
            self._log("INFO", "OUT", f"connection {record.key} closed")

    def _handle_request(self, line: str, record: ConnectionRecord):
        try:
            request = parse_request(line, self._config.delimiter)
        except MalformedLineError as exc:
            self._send_inline(record, Response.of(400, str(exc)))
            return
        data = dict(request.params)
        if not data.get("destination"):
            data["destination"] = record.key
        data["origin"] = record.key
        response = self._send("OUT", request.tag, request.sub_tag, data)
        if request.tag == "SRC" and request.sub_tag == "RQST" and response.success:
            return  # the enqueued job owns this request's stream
        self._send_inline(record, response)

    def _send_inline(self, record: ConnectionRecord, response: Response):
        if response.success and response.data:
            try:
                line = frame_document(response.data)
            except FrameError:
                line = response_frame(response)
        else:
            line = response_frame(response)
        try:
            record.write_line(line)
            record.write_line(END_LINE)
        except ConnectionLostError:
            pass

    def _heartbeat_loop(self):
        interval = self._config.heartbeat_interval
        tick = min(0.5, max(0.02, interval / 10))
        while self._running:
            now = time.monotonic()
            for record in self._keys.values():
                if isinstance(record, ConnectionRecord):
                    record.maybe_heartbeat(interval, now)
            time.sleep(tick)
