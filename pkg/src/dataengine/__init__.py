"""dataengine: tag-routed message bus and multi-tenant document streaming service."""

from .bus import (
    BAD_REQUEST,
    CONFLICT,
    DEFAULT_DELIMITER,
    INTERNAL_ERROR,
    NOT_FOUND,
    OK,
    STATUS_MESSAGES,
    UPSTREAM_ERROR,
    Packet,
    Response,
    Router,
    RouterRegistry,
    connect,
    disconnect,
    new_registry,
)
from .config import ConnectorConfig, PaginationMode, load_config, load_config_dir
from .connector import (
    HttpRequestSpec,
    LiveStreamHub,
    build_request,
    execute_protocol,
    iterate_dates,
    paginate,
)
from .engine import Engine, EngineConfig, JobState, RequestJob
from .errors import (
    BadRequestError,
    ConfigError,
    ConflictError,
    ConnectionLostError,
    EncodeError,
    EngineError,
    FrameError,
    MalformedLineError,
    NotFoundError,
    ProtocolError,
    StartupError,
    UpstreamError,
)
from .storage import (
    FileStore,
    MemoryStore,
    RequestNameRegistry,
    extract_node,
    extract_path,
    render_collection_name,
)
from .wire import (
    END_LINE,
    HEARTBEAT_LINE,
    Frame,
    FrameKind,
    FrameReader,
    KeyRegistry,
    RequestLine,
    classify_line,
    encode_request,
    frame_document,
    generate_destination_key,
    parse_request,
)

__version__ = "0.1.0"
