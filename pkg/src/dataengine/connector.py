"""Configuration-driven retrieval from external HTTP data sources.

A protocol run builds GET requests from its ConnectorConfig, walks pages under
one of four modes (SINGLE, URL, INCREMENTAL, STATIC), and terminates on the
limiter rule: the first page holding fewer records than the configured limit
ends the crawl. Dated protocols fan out into one run per calendar day.

The HTTP executor is injected as a plain callable ``spec -> (status, body)``
so runs are testable against any upstream, live or mock.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import date as Date, datetime, timedelta
from typing import Any, Callable, Iterator, Mapping
from urllib.parse import quote, urlencode

from .bus import Response
from .config import ConnectorConfig, PaginationMode, strftime_pattern
from .errors import (
    BadRequestError,
    EngineError,
    NotFoundError,
    ProtocolError,
    UpstreamError,
)
from .storage import extract_node

HttpExecutor = Callable[["HttpRequestSpec"], tuple[int, str]]


@dataclass(frozen=True)
class HttpRequestSpec:
    """One outbound GET: full URL (query already encoded) plus headers."""

    url: str
    headers: Mapping[str, str] = field(default_factory=dict)
    method: str = "GET"


@dataclass
class PageResult:
    """One fetched page: extracted records, raw body, running request count."""

    records: list[str]
    raw_body: str
    request_count_so_far: int


def render_date(day: Date, date_format: str) -> str:
    return day.strftime(strftime_pattern(date_format))


def parse_date(text: str, date_format: str = "yyyy-MM-dd") -> Date:
    try:
        return datetime.strptime(text, strftime_pattern(date_format)).date()
    except ValueError:
        raise BadRequestError(f"invalid date {text!r} for format {date_format}") from None


def iterate_dates(start: Date, end: Date) -> list[Date]:
    """Inclusive daily sequence from start to end."""
    if start > end:
        raise BadRequestError(f"start date {start} is after end date {end}")
    return [start + timedelta(days=offset) for offset in range((end - start).days + 1)]


def build_request(
    config: ConnectorConfig,
    runtime_params: Mapping[str, str] | None = None,
    cursor: str | None = None,
    date: Date | None = None,
) -> HttpRequestSpec:
    """Deterministically assemble the request for one page.

    Runtime parameters override configured url properties on key collision.
    INCREMENTAL/STATIC substitute the cursor into their configured parameter;
    URL mode treats the cursor as the complete next-page URL.
    """
    if cursor is not None and config.mode is PaginationMode.SINGLE:
        raise EngineError("cursor supplied for SINGLE mode (caller bug)")
    if cursor is not None and config.mode is PaginationMode.URL:
        return HttpRequestSpec(url=cursor, headers=dict(config.url_headers))

    params = dict(config.url_properties)
    for key, value in (runtime_params or {}).items():
        params[key] = value
    if cursor is not None and config.cursor_param:
        params[config.cursor_param] = cursor
    if date is not None:
        rendered = render_date(date, config.date_format)
        if config.date_start_key:
            params[config.date_start_key] = rendered
        if config.date_end_key:
            params[config.date_end_key] = rendered

    url = config.url_base
    if params:
        query = urlencode(params, quote_via=quote)
        separator = "&" if "?" in url else "?"
        url = f"{url}{separator}{query}"
    return HttpRequestSpec(url=url, headers=dict(config.url_headers))


def _compact(value: Any) -> str:
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def _scalar_text(node: Any) -> str:
    if isinstance(node, (dict, list)):
        raise BadRequestError("cursor path terminates at a non-scalar value")
    if isinstance(node, str):
        return node
    return json.dumps(node)


def fetch_page(
    config: ConnectorConfig,
    http: HttpExecutor,
    runtime_params: Mapping[str, str] | None,
    cursor: str | None,
    date: Date | None,
    page_number: int,
) -> tuple[list[str], Any]:
    """Execute one page request; returns record texts and the parsed body."""
    spec = build_request(config, runtime_params, cursor, date)
    status, body = http(spec)
    if not 200 <= status < 300:
        raise UpstreamError(
            f"upstream returned status {status} on page {page_number} of '{config.name}'",
            status=status,
            page=page_number,
        )
    try:
        parsed = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"page {page_number} of '{config.name}' is not JSON: {exc}") from None
    try:
        records_node = extract_node(parsed, config.records_path)
    except (NotFoundError, BadRequestError) as exc:
        raise ProtocolError(f"records path missing on page {page_number} of '{config.name}': {exc}") from None
    if not isinstance(records_node, list):
        raise ProtocolError(f"records path does not locate an array on page {page_number} of '{config.name}'")
    return [_compact(record) for record in records_node], parsed


def _next_cursor(config: ConnectorConfig, parsed_body: Any, records_node_last: Any, page_number: int) -> str:
    source = parsed_body
    if config.mode is PaginationMode.STATIC and config.cursor_anchor == "record":
        source = records_node_last
    try:
        return _scalar_text(extract_node(source, config.cursor_path or ()))
    except (NotFoundError, BadRequestError) as exc:
        raise ProtocolError(f"cursor path missing on page {page_number} of '{config.name}': {exc}") from None


def paginate(
    config: ConnectorConfig,
    http: HttpExecutor,
    runtime_params: Mapping[str, str] | None = None,
    date: Date | None = None,
) -> Iterator[str]:
    """Yield every record of a protocol run, in upstream order, across pages.

    Termination: SINGLE stops after exactly one request; the other modes stop
    after the first page whose record count falls below the limit (a full
    final page therefore costs one extra probe request).
    """
    mode = config.mode
    cursor = config.cursor_initial if mode is PaginationMode.INCREMENTAL else None
    page_number = 0
    while True:
        page_number += 1
        records, parsed = fetch_page(config, http, runtime_params, cursor, date, page_number)
        yield from records
        if mode is PaginationMode.SINGLE or len(records) < config.limit:
            return
        if mode is PaginationMode.INCREMENTAL:
            cursor = str(int(cursor) + config.cursor_step)  # type: ignore[arg-type]
            continue
        last_record = json.loads(records[-1]) if records else None
        advanced = _next_cursor(config, parsed, last_record, page_number)
        if advanced == cursor:
            raise ProtocolError(
                f"cursor {advanced!r} did not advance after page {page_number} of '{config.name}'"
            )
        cursor = advanced


def execute_protocol(
    config: ConnectorConfig,
    http: HttpExecutor,
    runtime_params: Mapping[str, str] | None = None,
    date_range: tuple[Date, Date] | None = None,
) -> Iterator[tuple[Date | None, Iterator[str]]]:
    """One paginate run per day (dated) or a single undated run.

    Pagination errors propagate out of the per-day document stream, tagged
    with the failing date.
    """
    if date_range is None:
        yield None, paginate(config, http, runtime_params)
        return
    start, end = date_range
    for day in iterate_dates(start, end):
        yield day, _date_tagged(paginate(config, http, runtime_params, date=day), day)


def _date_tagged(stream: Iterator[str], day: Date) -> Iterator[str]:
    try:
        yield from stream
    except EngineError as exc:
        raise type(exc)(f"{exc} (date {day.isoformat()})") from exc


class LiveStreamHub:
    """Inbound push feeds: each registered stream persists pushed documents to
    its collection and fans them out, in order, to subscribed sinks."""

    def __init__(self, store):
        self._store = store
        self._streams: dict[str, list[Callable[[str], None]]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._mutex = threading.Lock()

    def register_stream(self, stream_id: str) -> Response:
        if not stream_id:
            return Response.of(400, "stream id must be non-empty")
        with self._mutex:
            if stream_id in self._streams:
                return Response.of(409, f"stream '{stream_id}' already registered")
            self._streams[stream_id] = []
            self._locks[stream_id] = threading.Lock()
        self._store.ingest(stream_id, [])  # create the backing collection
        return Response.ok()

    def subscribe(self, stream_id: str, sink: Callable[[str], None]) -> Response:
        with self._mutex:
            if stream_id not in self._streams:
                return Response.of(404, f"unknown stream '{stream_id}'")
            self._streams[stream_id].append(sink)
            return Response.ok()

    def streams(self) -> list[str]:
        return sorted(self._streams)

    def push(self, stream_id: str, doc: str) -> Response:
        with self._mutex:
            lock = self._locks.get(stream_id)
        if lock is None:
            return Response.of(404, f"unknown stream '{stream_id}'")
        with lock:
            try:
                self._store.ingest(stream_id, [doc])
            except BadRequestError as exc:
                return Response.of(400, str(exc))
            with self._mutex:
                sinks = list(self._streams[stream_id])
            dead = []
            for sink in sinks:
                try:
                    sink(doc)
                except Exception:
                    dead.append(sink)
            if dead:
                with self._mutex:
                    self._streams[stream_id] = [s for s in self._streams[stream_id] if s not in dead]
        return Response.ok()
