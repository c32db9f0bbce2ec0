"""In-process tag-routed message bus.

Routers are addressable endpoints identified by a unique string tag, each
exposing named processes (sub-tags) that take a Packet and return a Response.
A RouterRegistry is the shared routing table: it resolves a packet's tag and
sub-tag in one associative lookup each, and merges atomically when two
independent router groups connect.

Concurrency contract: any number of threads may call ``send`` simultaneously;
process registration, connect, and disconnect are exclusive against each other
and against in-flight dispatch. Handlers run on the caller's thread and must
not call connect/disconnect from inside a dispatch.

Status codes mirror HTTP semantics and are exported as module constants; the
code -> canonical message table is ``STATUS_MESSAGES``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

from .errors import ConflictError

DEFAULT_DELIMITER = "&&&"

OK = 200
BAD_REQUEST = 400
NOT_FOUND = 404
CONFLICT = 409
INTERNAL_ERROR = 500
UPSTREAM_ERROR = 502

STATUS_MESSAGES: Mapping[int, str] = MappingProxyType({
    OK: "OK",
    BAD_REQUEST: "Bad Request",
    NOT_FOUND: "Not Found",
    CONFLICT: "Conflict",
    INTERNAL_ERROR: "Internal Server Error",
    UPSTREAM_ERROR: "Bad Gateway",
})


def _identifier_error(value: str, kind: str) -> str | None:
    """Return an error detail if ``value`` is not a legal tag/sub-tag."""
    if not value:
        return f"{kind} must be non-empty"
    if DEFAULT_DELIMITER in value:
        return f"{kind} must not contain the delimiter {DEFAULT_DELIMITER!r}"
    if "\n" in value or "\r" in value:
        return f"{kind} must not contain line breaks"
    return None


@dataclass(frozen=True)
class Response:
    """Outcome of a routed call: status code, canonical message, optional data."""

    code: int
    message: str
    data: str | None = None

    @classmethod
    def of(cls, code: int, detail: str | None = None, data: str | None = None) -> "Response":
        message = STATUS_MESSAGES.get(code, "Unknown Status")
        if detail:
            message = f"{message}: {detail}"
        return cls(code, message, data)

    @classmethod
    def ok(cls, data: str | None = None) -> "Response":
        return cls(OK, STATUS_MESSAGES[OK], data)

    @property
    def success(self) -> bool:
        return self.code == OK


@dataclass(frozen=True)
class Packet:
    """Immutable routed unit: sender, receiver tag, process sub-tag, text payload."""

    sender: str
    tag: str
    sub_tag: str
    data: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "data", MappingProxyType(dict(self.data)))


Handler = Callable[[Packet], Response]


class _ReadWriteLock:
    """Reader-preferring RW lock.

    Readers (dispatch) share; writers (registration/merge/disconnect) exclude
    readers and each other. Read acquisition only blocks while a writer holds
    the lock, never while one waits, so nested sends from inside a handler
    cannot deadlock.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class Router:
    """Interactive endpoint on the bus: a unique tag plus a sub-tag -> handler table.

    A router constructed without a registry starts in a fresh singleton
    registry; pass ``registry`` to join an existing group (raises
    ConflictError if the tag is taken).
    """

    def __init__(self, tag: str, registry: "RouterRegistry | None" = None):
        error = _identifier_error(tag, "tag")
        if error:
            raise ValueError(error)
        self.tag = tag
        self._processes: dict[str, Handler] = {}
        self.registry: RouterRegistry | None = None
        target = registry if registry is not None else RouterRegistry()
        response = target._attach(self)
        if not response.success:
            raise ConflictError(response.message)

    def register_process(self, sub_tag: str, handler: Handler) -> Response:
        """Bind ``handler`` to ``sub_tag``; packets to (self.tag, sub_tag) invoke it."""
        error = _identifier_error(sub_tag, "sub-tag")
        if error:
            return Response.of(BAD_REQUEST, error)
        lock = self.registry._lock if self.registry is not None else None
        if lock is not None:
            lock.acquire_write()
        try:
            if sub_tag in self._processes:
                return Response.of(CONFLICT, f"process '{sub_tag}' already registered on '{self.tag}'")
            self._processes[sub_tag] = handler
            return Response.ok()
        finally:
            if lock is not None:
                lock.release_write()

    def sub_tags(self) -> list[str]:
        return list(self._processes)

    def connect(self, other: "Router") -> Response:
        return connect(self, other)

    def send(self, packet: Packet) -> Response:
        if self.registry is None:
            return Response.of(NOT_FOUND, f"router '{self.tag}' is not registered")
        return self.registry.send(packet)

    def __repr__(self) -> str:
        return f"Router({self.tag!r}, processes={list(self._processes)})"


class RouterRegistry:
    """Tag -> Router table with average constant-time dispatch and atomic merge."""

    def __init__(self):
        self._routers: dict[str, Router] = {}
        self._lock = _ReadWriteLock()
        # Instrumentation: lookups performed by send(); exact when single-threaded.
        self.tag_lookups = 0
        self.sub_tag_lookups = 0

    def __len__(self) -> int:
        return len(self._routers)

    def __contains__(self, tag: str) -> bool:
        return tag in self._routers

    def tags(self) -> list[str]:
        return list(self._routers)

    def router(self, tag: str) -> Router | None:
        return self._routers.get(tag)

    def _attach(self, router: Router) -> Response:
        self._lock.acquire_write()
        try:
            if router.tag in self._routers:
                return Response.of(CONFLICT, f"tag '{router.tag}' already registered")
            self._routers[router.tag] = router
            router.registry = self
            return Response.ok()
        finally:
            self._lock.release_write()

    def disconnect(self, router: Router) -> Response:
        """Remove ``router``; subsequent sends to its tag return 404."""
        self._lock.acquire_write()
        try:
            if self._routers.get(router.tag) is not router:
                return Response.of(NOT_FOUND, f"router '{router.tag}' is not registered here")
            del self._routers[router.tag]
            router.registry = None
            return Response.ok()
        finally:
            self._lock.release_write()

    def send(self, packet: Packet) -> Response:
        """Dispatch ``packet`` to the handler at (tag, sub-tag) and return its Response."""
        self._lock.acquire_read()
        try:
            self.tag_lookups += 1
            router = self._routers.get(packet.tag)
            if router is None:
                return Response.of(NOT_FOUND, f"no router with tag '{packet.tag}'")
            self.sub_tag_lookups += 1
            handler = router._processes.get(packet.sub_tag)
            if handler is None:
                return Response.of(NOT_FOUND, f"router '{packet.tag}' has no process '{packet.sub_tag}'")
            try:
                response = handler(packet)
            except Exception as exc:  # handler failure must not poison the bus
                return Response.of(INTERNAL_ERROR, f"process '{packet.tag}/{packet.sub_tag}' failed: {exc}")
            if not isinstance(response, Response):
                return Response.of(INTERNAL_ERROR, f"process '{packet.tag}/{packet.sub_tag}' returned no Response")
            return response
        finally:
            self._lock.release_read()


def new_registry() -> RouterRegistry:
    return RouterRegistry()


def disconnect(router: Router) -> Response:
    if router.registry is None:
        return Response.of(NOT_FOUND, f"router '{router.tag}' is not registered")
    return router.registry.disconnect(router)


def connect(a: Router, b: Router) -> Response:
    """Join the router groups of ``a`` and ``b`` under one registry.

    The merge is atomic: on a tag collision between the two groups both
    registries are left exactly as they were and 409 is returned. Detached
    routers (after disconnect) re-attach to the other side's registry.
    """
    while True:
        ra, rb = a.registry, b.registry
        if ra is not None and ra is rb:
            return Response.ok()
        if ra is None and rb is None:
            if a is b:
                target = RouterRegistry()
                return target._attach(a)
            target = RouterRegistry()
            response = target._attach(a)
            if not response.success:
                return response
            return target._attach(b)
        if ra is None:
            return rb._attach(a)  # type: ignore[union-attr]
        if rb is None:
            return ra._attach(b)

        first, second = (ra, rb) if id(ra) < id(rb) else (rb, ra)
        first._lock.acquire_write()
        second._lock.acquire_write()
        try:
            if a.registry is not ra or b.registry is not rb:
                continue  # raced with another merge; re-read and retry
            collision = set(ra._routers) & set(rb._routers)
            if collision:
                return Response.of(
                    CONFLICT, f"tag collision on merge: {', '.join(sorted(collision))}"
                )
            for router in rb._routers.values():
                ra._routers[router.tag] = router
                router.registry = ra
            rb._routers.clear()
            return Response.ok()
        finally:
            second._lock.release_write()
            first._lock.release_write()
