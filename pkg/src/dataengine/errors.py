"""Exception hierarchy shared by all engine components.

Every error carries a numeric status code from the same HTTP-style table the
message bus uses, so any failure can be rendered as an in-band Response frame.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine failures."""

    code = 500


class BadRequestError(EngineError):
    """Caller supplied malformed or invalid input."""

    code = 400


class NotFoundError(EngineError):
    """Addressed entity (tag, process, collection, protocol) does not exist."""

    code = 404


class ConflictError(EngineError):
    """Uniqueness violation: duplicate tag, sub-tag, or request name."""

    code = 409


class ConfigError(BadRequestError):
    """Properties file missing, malformed, or internally inconsistent."""


class EncodeError(BadRequestError):
    """Wire-line field contains the delimiter or a newline; no escaping exists."""


class MalformedLineError(BadRequestError):
    """Inbound request line violates the wire grammar."""


class FrameError(BadRequestError):
    """Payload cannot be framed: not a single JSON object."""


class UpstreamError(EngineError):
    """External data source returned a non-2xx status."""

    code = 502

    def __init__(self, message: str, status: int | None = None, page: int | None = None):
        super().__init__(message)
        self.status = status
        self.page = page


class ProtocolError(EngineError):
    """Upstream response violates the configured pagination contract."""

    code = 502


class ConnectionLostError(EngineError):
    """Stream closed before the end sentinel arrived."""

    code = 500


class StartupError(EngineError):
    """Engine could not come up (port busy, bad config file, duplicate name)."""

    code = 500
