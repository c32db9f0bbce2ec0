"""Router bus: registration, dispatch, merge semantics, and invariants."""

from __future__ import annotations

import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataengine.bus import (
    CONFLICT,
    INTERNAL_ERROR,
    NOT_FOUND,
    OK,
    STATUS_MESSAGES,
    Packet,
    Response,
    Router,
    RouterRegistry,
    connect,
    disconnect,
    new_registry,
)
from dataengine.errors import ConflictError


def echo_handler(packet: Packet) -> Response:
    return Response.ok(data=packet.data.get("k"))


def test_new_registry_empty():
    assert len(new_registry()) == 0


def test_register_routers_counts():
    registry = new_registry()
    Router("A", registry)
    assert len(registry) == 1
    Router("B", registry)
    assert len(registry) == 2


def test_duplicate_tag_rejected():
    registry = new_registry()
    Router("A", registry)
    with pytest.raises(ConflictError):
        Router("A", registry)
    assert len(registry) == 1


@pytest.mark.parametrize("bad_tag", ["", "A&&&B", "A\nB"])
def test_invalid_tag_rejected(bad_tag):
    with pytest.raises(ValueError):
        Router(bad_tag)


def test_register_process_and_dispatch():
    source = Router("SRC")
    assert source.register_process("RQST", echo_handler).code == OK
    response = source.send(Packet(sender="X", tag="SRC", sub_tag="RQST", data={"k": "v"}))
    assert response.code == OK
    assert response.data == "v"


def test_register_duplicate_sub_tag_conflict():
    router = Router("A")
    assert router.register_process("P", echo_handler).code == OK
    assert router.register_process("P", echo_handler).code == CONFLICT


def test_register_empty_sub_tag_bad_request():
    assert Router("A").register_process("", echo_handler).code == 400


def test_handler_receives_identical_data_map():
    seen = {}

    def capture(packet: Packet) -> Response:
        seen.update(packet.data)
        return Response.ok()

    router = Router("A")
    router.register_process("P", capture)
    payload = {"x": "1", "y": "2"}
    router.send(Packet(sender="T", tag="A", sub_tag="P", data=payload))
    assert seen == payload


def test_send_unknown_tag_not_found():
    registry = new_registry()
    Router("A", registry)
    response = registry.send(Packet(sender="X", tag="XYZ", sub_tag="P"))
    assert response.code == NOT_FOUND
    assert "XYZ" in response.message


def test_send_unknown_sub_tag_distinct_message():
    registry = new_registry()
    Router("A", registry)
    missing_tag = registry.send(Packet(sender="X", tag="B", sub_tag="P"))
    missing_sub = registry.send(Packet(sender="X", tag="A", sub_tag="P"))
    assert missing_tag.code == NOT_FOUND and missing_sub.code == NOT_FOUND
    assert missing_tag.message != missing_sub.message


def test_handler_exception_internal_error():
    router = Router("A")

    def boom(packet):
        raise RuntimeError("kaput")

    router.register_process("P", boom)
    response = router.send(Packet(sender="X", tag="A", sub_tag="P"))
    assert response.code == INTERNAL_ERROR
    assert "kaput" in response.message


def test_send_1000_packets_counter():
    router = Router("A")
    counts = {"n": 0}

    def counter(packet):
        counts["n"] += 1
        return Response.ok()

    router.register_process("P", counter)
    packet = Packet(sender="X", tag="A", sub_tag="P")
    for _ in range(1000):
        assert router.send(packet).code == OK
    assert counts["n"] == 1000


def test_connect_merges_singletons():
    a, b = Router("A"), Router("B")
    assert connect(a, b).code == OK
    assert a.registry is b.registry
    assert sorted(a.registry.tags()) == ["A", "B"]


def test_connect_self_idempotent():
    a = Router("A")
    registry = a.registry
    assert connect(a, a).code == OK
    assert a.registry is registry
    assert len(registry) == 1


def test_connect_collision_atomic():
    # Groups {A, B} and {B', C}: B's tag collides, nothing may move.
    a, b = Router("A"), Router("B")
    connect(a, b)
    b2, c = Router("B"), Router("C")
    connect(b2, c)
    left_before = sorted(a.registry.tags())
    right_before = sorted(b2.registry.tags())
    left_registry, right_registry = a.registry, b2.registry

    response = connect(a, c)

    assert response.code == CONFLICT
    assert a.registry is left_registry and c.registry is right_registry
    assert sorted(a.registry.tags()) == left_before
    assert sorted(c.registry.tags()) == right_before


def test_merge_correctness_shared_handler():
    a, b = Router("A"), Router("B")
    b.register_process("P", echo_handler)
    connect(a, b)
    packet = Packet(sender="A", tag="B", sub_tag="P", data={"k": "via-a"})
    assert a.registry.send(packet).data == "via-a"
    assert b.registry.send(packet).data == "via-a"
    assert a.registry is b.registry


def test_disconnect_removes_router():
    a = Router("A")
    registry = a.registry
    assert disconnect(a).code == OK
    assert registry.send(Packet(sender="X", tag="A", sub_tag="P")).code == NOT_FOUND
    assert disconnect(a).code == NOT_FOUND  # second disconnect


def test_disconnect_leaves_rest_routable():
    a, b, c = Router("A"), Router("B"), Router("C")
    connect(a, b)
    connect(b, c)
    c.register_process("P", echo_handler)
    assert disconnect(a).code == OK
    response = b.registry.send(Packet(sender="B", tag="C", sub_tag="P", data={"k": "v"}))
    assert response.code == OK and response.data == "v"
    assert sorted(b.registry.tags()) == ["B", "C"]


def test_disconnected_router_can_reconnect():
    a, b = Router("A"), Router("B")
    disconnect(a)
    assert connect(a, b).code == OK
    assert a.registry is b.registry


def test_dispatch_lookup_counts():
    registry = new_registry()
    router = Router("A", registry)
    router.register_process("P", echo_handler)
    registry.send(Packet(sender="X", tag="A", sub_tag="P"))
    assert registry.tag_lookups == 1
    assert registry.sub_tag_lookups == 1
    registry.send(Packet(sender="X", tag="A", sub_tag="P"))
    assert registry.tag_lookups == 2
    assert registry.sub_tag_lookups == 2


def test_dispatch_determinism():
    router = Router("A")
    router.register_process("P", echo_handler)
    packet = Packet(sender="X", tag="A", sub_tag="P", data={"k": "stable"})
    responses = {router.send(packet) for _ in range(50)}
    assert len(responses) == 1


def test_status_code_table_complete():
    assert STATUS_MESSAGES[200] == "OK"
    for code in (200, 400, 404, 409, 500, 502):
        assert code in STATUS_MESSAGES


def test_packet_data_immutable():
    packet = Packet(sender="X", tag="A", sub_tag="P", data={"k": "v"})
    with pytest.raises(TypeError):
        packet.data["k"] = "w"  # type: ignore[index]


def test_concurrent_sends_share_registry():
    router = Router("A")
    lock = threading.Lock()
    totals = {"n": 0}

    def counter(packet):
        with lock:
            totals["n"] += 1
        return Response.ok()

    router.register_process("P", counter)
    packet = Packet(sender="X", tag="A", sub_tag="P")

    def worker():
        for _ in range(200):
            assert router.send(packet).code == OK

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert totals["n"] == 1600


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from("ABCDEFGH"), min_size=1, max_size=30), st.randoms())
def test_tag_uniqueness_under_random_operations(tags, rng):
    """No sequence of register/connect/disconnect leaves duplicate tags anywhere."""
    routers: list[Router] = []
    for tag in tags:
        try:
            routers.append(Router(tag, rng.choice([r.registry for r in routers] + [None]) if routers else None))
        except ConflictError:
            pass
        action = rng.random()
        if action < 0.3 and len(routers) >= 2:
            connect(rng.choice(routers), rng.choice(routers))
        elif action < 0.4 and routers:
            disconnect(rng.choice(routers))
        registries = {id(r.registry): r.registry for r in routers if r.registry is not None}
        for registry in registries.values():
            assert len(registry.tags()) == len(set(registry.tags()))
            for router in [registry.router(t) for t in registry.tags()]:
                assert router is not None and router.registry is registry


def test_randomized_operation_storm():
    """Seeded 10k-op random walk across up to 50 routers; invariants hold throughout."""
    rng = random.Random(20240811)
    tag_pool = [f"R{i:02d}" for i in range(50)]
    routers: dict[str, Router] = {}

    def check_invariants():
        registries = {id(r.registry): r.registry for r in routers.values() if r.registry is not None}
        for registry in registries.values():
            tags = registry.tags()
            assert len(tags) == len(set(tags))
            for tag in tags:
                assert registry.router(tag).registry is registry

    for step in range(10_000):
        op = rng.random()
        if op < 0.25:
            tag = rng.choice(tag_pool)
            if tag not in routers:
                router = Router(tag)
                router.register_process("E", echo_handler)
                routers[tag] = router
        elif op < 0.55 and len(routers) >= 2:
            a, b = rng.sample(list(routers.values()), 2)
            before_a = sorted(a.registry.tags()) if a.registry else None
            before_b = sorted(b.registry.tags()) if b.registry else None
            response = connect(a, b)
            if response.code == CONFLICT:
                after_a = sorted(a.registry.tags()) if a.registry else None
                after_b = sorted(b.registry.tags()) if b.registry else None
                assert before_a == after_a and before_b == after_b
        elif op < 0.65 and routers:
            tag = rng.choice(list(routers))
            router = routers.pop(tag)
            disconnect(router)
        elif routers:
            tag = rng.choice(list(routers))
            router = routers[tag]
            if router.registry is not None:
                response = router.registry.send(
                    Packet(sender="T", tag=tag, sub_tag="E", data={"k": str(step)})
                )
                assert response.code == OK and response.data == str(step)
        if step % 500 == 0:
            check_invariants()
    check_invariants()
