"""Connector: request building, date iteration, pagination laws, live streams."""

from __future__ import annotations

import json
import math
from dataclasses import replace
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataengine.config import PaginationMode
from dataengine.connector import (
    LiveStreamHub,
    build_request,
    execute_protocol,
    iterate_dates,
    paginate,
    parse_date,
)
from dataengine.errors import (
    BadRequestError,
    EngineError,
    ProtocolError,
    UpstreamError,
)
from dataengine.storage import MemoryStore
from dataengine.testkit import MockDataset, seed_records

from conftest import MODE_ROUTES, local_executor, make_config

ALL_MODES = list(PaginationMode)


def incremental_requests(n: int, limit: int) -> int:
    """Oracle: strict below-limit termination costs one probe on exact multiples."""
    if n % limit == 0:
        return n // limit + 1
    return math.ceil(n / limit)


class TestBuildRequest:
    def test_single_passthrough(self):
        config = make_config(PaginationMode.SINGLE, "https://e/x")
        spec = build_request(config, runtime_params={"a": "1"})
        assert spec.url == "https://e/x?a=1"
        assert spec.method == "GET"

    def test_incremental_cursor_param(self):
        config = make_config(PaginationMode.INCREMENTAL, "https://e/x")
        spec = build_request(config, cursor="3")
        assert "page=3" in spec.url

    def test_static_cursor_param(self):
        config = make_config(PaginationMode.STATIC, "https://e/x")
        spec = build_request(config, cursor="1650000000")
        assert "startTime=1650000000" in spec.url

    def test_url_mode_cursor_replaces_base(self):
        config = make_config(PaginationMode.URL, "https://e/x")
        spec = build_request(config, cursor="https://e/page2?offset=10")
        assert spec.url == "https://e/page2?offset=10"

    def test_single_with_cursor_is_caller_bug(self):
        config = make_config(PaginationMode.SINGLE, "https://e/x")
        with pytest.raises(EngineError):
            build_request(config, cursor="1")

    def test_runtime_overrides_config_properties(self):
        config = replace(make_config(PaginationMode.SINGLE, "https://e/x"), url_properties={"a": "1", "b": "2"})
        spec = build_request(config, runtime_params={"b": "override"})
        assert spec.url == "https://e/x?a=1&b=override"

    def test_date_rendered_into_keys(self):
        config = replace(make_config(PaginationMode.SINGLE, "https://e/x"), date_start_key="from", date_end_key="to")
        spec = build_request(config, date=date(2022, 1, 5))
        assert "from=2022-01-05" in spec.url and "to=2022-01-05" in spec.url

    def test_percent_encoding(self):
        config = make_config(PaginationMode.SINGLE, "https://e/x")
        spec = build_request(config, runtime_params={"q": "a b&c"})
        assert spec.url == "https://e/x?q=a%20b%26c"

    def test_deterministic(self):
        config = make_config(PaginationMode.STATIC, "https://e/x")
        specs = {build_request(config, {"a": "1"}, cursor="5").url for _ in range(10)}
        assert len(specs) == 1

    def test_headers_carried(self):
        config = replace(make_config(PaginationMode.SINGLE, "https://e/x"), url_headers={"x-key": "secret"})
        assert build_request(config).headers == {"x-key": "secret"}


class TestIterateDates:
    def test_year_span_inclusive(self):
        days = iterate_dates(date(2022, 1, 1), date(2023, 1, 1))
        assert len(days) == 366
        assert days[0] == date(2022, 1, 1) and days[-1] == date(2023, 1, 1)

    def test_single_day(self):
        assert iterate_dates(date(2022, 5, 5), date(2022, 5, 5)) == [date(2022, 5, 5)]

    def test_month_boundary(self):
        days = iterate_dates(date(2022, 2, 27), date(2022, 3, 2))
        assert days == [date(2022, 2, 27), date(2022, 2, 28), date(2022, 3, 1), date(2022, 3, 2)]

    def test_reversed_range_rejected(self):
        with pytest.raises(BadRequestError):
            iterate_dates(date(2022, 1, 2), date(2022, 1, 1))

    @given(st.integers(min_value=0, max_value=400))
    @settings(max_examples=30, deadline=None)
    def test_length_and_monotonic(self, span):
        start = date(2021, 6, 15)
        days = iterate_dates(start, start.fromordinal(start.toordinal() + span))
        assert len(days) == span + 1
        assert all(b > a for a, b in zip(days, days[1:]))

    def test_parse_date(self):
        assert parse_date("2022-01-31") == date(2022, 1, 31)
        with pytest.raises(BadRequestError):
            parse_date("01/31/2022")


def run_mode(mode: PaginationMode, n: int, limit: int) -> tuple[list[dict], int]:
    """Paginate a seeded dataset through the in-process executor."""
    route = MODE_ROUTES[mode]
    dataset = MockDataset(route=route, records=seed_records(n), mode=mode, limit=limit)
    execute, calls = local_executor([dataset])
    config = make_config(mode, f"http://mock.local{route}", limit=limit)
    records = [json.loads(r) for r in paginate(config, execute)]
    return records, len(calls)


class TestPaginationModes:
    def test_single_one_request(self):
        records, requests = run_mode(PaginationMode.SINGLE, 7, 10)
        assert [r["idx"] for r in records] == list(range(7))
        assert requests == 1

    def test_incremental_25_over_10(self):
        records, requests = run_mode(PaginationMode.INCREMENTAL, 25, 10)
        assert [r["idx"] for r in records] == list(range(25))
        assert requests == 3

    def test_exact_multiple_probe(self):
        records, requests = run_mode(PaginationMode.INCREMENTAL, 20, 10)
        assert len(records) == 20
        assert requests == 3  # full final page forces one probe

    @pytest.mark.parametrize("mode", ALL_MODES)
    @pytest.mark.parametrize("n", [0, 1, 9, 10, 11, 25, 100])
    def test_completeness_fixed_cases(self, mode, n):
        records, _ = run_mode(mode, n, 10)
        assert [r["idx"] for r in records] == list(range(n))

    @pytest.mark.parametrize("mode", [PaginationMode.URL, PaginationMode.INCREMENTAL, PaginationMode.STATIC])
    def test_completeness_sweep(self, mode):
        """Every (N, L) pair in N=[0,100] x L=[1,20] reproduces the dataset exactly once."""
        for n in range(0, 101):
            for limit in range(1, 21):
                records, requests = run_mode(mode, n, limit)
                assert [r["idx"] for r in records] == list(range(n)), (mode, n, limit)
                if mode is PaginationMode.INCREMENTAL:
                    assert requests == incremental_requests(n, limit), (n, limit)

    def test_request_count_law_exact(self):
        for n in (0, 1, 9, 10, 11, 25, 100):
            _, requests = run_mode(PaginationMode.INCREMENTAL, n, 10)
            assert requests == incremental_requests(n, 10), n


class TestPaginateErrors:
    def test_non_2xx_surfaces_status_and_page(self):
        config = make_config(PaginationMode.SINGLE, "http://mock.local/missing")
        execute, _ = local_executor([])
        with pytest.raises(UpstreamError) as excinfo:
            list(paginate(config, execute))
        assert excinfo.value.status == 404
        assert excinfo.value.page == 1

    def test_records_path_missing(self):
        config = make_config(PaginationMode.SINGLE, "http://x/")
        with pytest.raises(ProtocolError, match="records path"):
            list(paginate(config, lambda spec: (200, '{"rows": []}')))

    def test_body_not_json(self):
        config = make_config(PaginationMode.SINGLE, "http://x/")
        with pytest.raises(ProtocolError, match="not JSON"):
            list(paginate(config, lambda spec: (200, "<html>")))

    def test_cursor_path_missing(self):
        config = make_config(PaginationMode.URL, "http://x/", limit=2)
        body = json.dumps({"data": [{"idx": 0}, {"idx": 1}]})  # full page, no next.url
        with pytest.raises(ProtocolError, match="cursor path"):
            list(paginate(config, lambda spec: (200, body)))

    def test_stuck_cursor_guard(self):
        config = make_config(PaginationMode.STATIC, "http://x/", limit=1)
        body = json.dumps({"data": [{"idx": 7}]})  # same full page forever
        with pytest.raises(ProtocolError, match="did not advance"):
            list(paginate(config, lambda spec: (200, body)))


class TestExecuteProtocol:
    def test_undated_single_pair(self):
        dataset = MockDataset(route="/single", records=seed_records(3), mode=PaginationMode.SINGLE)
        execute, _ = local_executor([dataset])
        config = make_config(PaginationMode.SINGLE, "http://mock.local/single")
        pairs = list(execute_protocol(config, execute))
        assert len(pairs) == 1
        day, docs = pairs[0]
        assert day is None
        assert len(list(docs)) == 3

    def test_dated_three_pairs_in_order(self):
        dataset = MockDataset(route="/incremental", records=seed_records(5), mode=PaginationMode.INCREMENTAL, limit=10)
        execute, _ = local_executor([dataset])
        config = make_config(PaginationMode.INCREMENTAL, "http://mock.local/incremental")
        pairs = list(execute_protocol(config, execute, date_range=(date(2022, 1, 1), date(2022, 1, 3))))
        assert [d for d, _ in pairs] == [date(2022, 1, 1), date(2022, 1, 2), date(2022, 1, 3)]
        for _, docs in pairs:
            assert len(list(docs)) == 5

    def test_failure_tagged_with_date(self):
        dataset = MockDataset(
            route="/incremental", records=seed_records(5), mode=PaginationMode.INCREMENTAL, limit=10
        )
        execute, calls = local_executor([dataset])

        def execute_failing_second(spec):
            if len(calls) + 1 == 2:  # day 2's only request
                calls.append(spec.url)
                return 500, json.dumps({"error": "scripted"})
            return execute(spec)

        config = make_config(PaginationMode.INCREMENTAL, "http://mock.local/incremental")
        pairs = execute_protocol(config, execute_failing_second, date_range=(date(2022, 1, 1), date(2022, 1, 3)))
        day1, docs1 = next(pairs)
        assert len(list(docs1)) == 5
        day2, docs2 = next(pairs)
        assert day2 == date(2022, 1, 2)
        with pytest.raises(UpstreamError, match="2022-01-02"):
            list(docs2)


class TestLiveStreamHub:
    def test_push_stores_and_counts(self):
        store = MemoryStore()
        hub = LiveStreamHub(store)
        assert hub.register_stream("prices").code == 200
        assert hub.push("prices", '{"p": 1}').code == 200
        assert list(store.fetch("prices")) == ['{"p": 1}']

    def test_push_unknown_stream(self):
        hub = LiveStreamHub(MemoryStore())
        assert hub.push("nope", "{}").code == 404

    def test_push_malformed_doc(self):
        hub = LiveStreamHub(MemoryStore())
        hub.register_stream("s")
        assert hub.push("s", "not json").code == 400

    def test_duplicate_stream_conflicts(self):
        hub = LiveStreamHub(MemoryStore())
        hub.register_stream("s")
        assert hub.register_stream("s").code == 409

    def test_subscribers_receive_in_order(self):
        hub = LiveStreamHub(MemoryStore())
        hub.register_stream("s")
        seen: list[str] = []
        assert hub.subscribe("s", seen.append).code == 200
        for i in range(100):
            hub.push("s", json.dumps({"i": i}))
        assert [json.loads(d)["i"] for d in seen] == list(range(100))

    def test_broken_subscriber_dropped(self):
        hub = LiveStreamHub(MemoryStore())
        hub.register_stream("s")

        def broken(doc):
            raise RuntimeError("gone")

        hub.subscribe("s", broken)
        assert hub.push("s", "{}").code == 200
        assert hub.push("s", "{}").code == 200
