"""Properties-file configuration for external data protocols.

Grammar: UTF-8 ``key=value`` lines, full-line ``#`` comments, no
continuations. Dotted keys follow the connector vocabulary (``url.base``,
``url.properties.<name>``, ``url.headers.<name>``, ``mode``, ``limit``,
``records.path``, ``cursor.path``, ``cursor.param``, ``date.start``,
``date.end``, ``date.format``). Mode-specific keys must be present exactly
when the pagination mode requires them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

DEFAULT_DATE_FORMAT = "yyyy-MM-dd"
DEFAULT_LIMIT = 100
DEFAULT_RECORDS_PATH = "data"

# Java-style date tokens -> strftime; the collection naming scheme fixes the default.
_DATE_TOKENS = (("yyyy", "%Y"), ("MM", "%m"), ("dd", "%d"), ("HH", "%H"), ("mm", "%M"), ("ss", "%S"))


class PaginationMode(Enum):
    SINGLE = "SINGLE"
    URL = "URL"
    INCREMENTAL = "INCREMENTAL"
    STATIC = "STATIC"


def strftime_pattern(date_format: str) -> str:
    """Translate a yyyy-MM-dd style pattern into a strftime pattern."""
    pattern = date_format
    for token, replacement in _DATE_TOKENS:
        pattern = pattern.replace(token, replacement)
    return pattern


def parse_path(text: str) -> tuple[str | int, ...]:
    """Split a dotted path; purely numeric segments become array indices."""
    steps: list[str | int] = []
    for segment in text.split("."):
        if not segment:
            raise ConfigError(f"empty segment in path {text!r}")
        steps.append(int(segment) if segment.lstrip("-").isdigit() else segment)
    return tuple(steps)


@dataclass(frozen=True)
class ConnectorConfig:
    """One configured external protocol, validated against its pagination mode."""

    name: str
    url_base: str
    mode: PaginationMode
    url_properties: Mapping[str, str] = field(default_factory=dict)
    url_headers: Mapping[str, str] = field(default_factory=dict)
    limit: int = DEFAULT_LIMIT
    records_path: tuple[str | int, ...] = (DEFAULT_RECORDS_PATH,)
    cursor_path: tuple[str | int, ...] | None = None
    cursor_param: str | None = None
    cursor_initial: str = "1"
    cursor_step: int = 1
    cursor_anchor: str = "record"
    date_start_key: str | None = None
    date_end_key: str | None = None
    date_format: str = DEFAULT_DATE_FORMAT
    retry_count: int = 0  # reserved; retries are not attempted


def parse_properties(text: str, source: str = "<properties>") -> dict[str, str]:
    """Parse ``key=value`` lines into an ordered mapping; duplicates are errors."""
    entries: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
        entries[key] = value
    return entries


_KNOWN_KEYS = {
    "name", "url.base", "mode", "limit", "records.path",
    "cursor.path", "cursor.param", "cursor.initial", "cursor.step", "cursor.anchor",
    "date.start", "date.end", "date.format", "retry.count",
}
_KNOWN_PREFIXES = ("url.properties.", "url.headers.")


def build_config(entries: Mapping[str, str], fallback_name: str, source: str = "<properties>") -> ConnectorConfig:
    """Validate a parsed properties mapping and assemble a ConnectorConfig."""
    for key in entries:
        if key not in _KNOWN_KEYS and not key.startswith(_KNOWN_PREFIXES):
            raise ConfigError(f"{source}: unknown key '{key}'")
    for required in ("url.base", "mode"):
        if required not in entries:
            raise ConfigError(f"{source}: missing required key '{required}'")

    mode_text = entries["mode"].upper()
    try:
        mode = PaginationMode(mode_text)
    except ValueError:
        raise ConfigError(f"{source}: unknown mode '{entries['mode']}'") from None

    needs_cursor_path = mode in (PaginationMode.URL, PaginationMode.STATIC)
    needs_cursor_param = mode in (PaginationMode.INCREMENTAL, PaginationMode.STATIC)
    if needs_cursor_path and "cursor.path" not in entries:
        raise ConfigError(f"{source}: cursor.path required for mode {mode.value}")
    if not needs_cursor_path and "cursor.path" in entries:
        raise ConfigError(f"{source}: cursor.path not allowed for mode {mode.value}")
    if needs_cursor_param and "cursor.param" not in entries:
        raise ConfigError(f"{source}: cursor.param required for mode {mode.value}")
    if not needs_cursor_param and "cursor.param" in entries:
        raise ConfigError(f"{source}: cursor.param not allowed for mode {mode.value}")
    if "cursor.anchor" in entries and mode is not PaginationMode.STATIC:
        raise ConfigError(f"{source}: cursor.anchor only applies to mode STATIC")

    try:
        limit = int(entries.get("limit", str(DEFAULT_LIMIT)))
    except ValueError:
        raise ConfigError(f"{source}: limit must be an integer") from None
    if limit < 1:
        raise ConfigError(f"{source}: limit must be >= 1")

    cursor_initial = entries.get("cursor.initial", "1")
    try:
        cursor_step = int(entries.get("cursor.step", "1"))
    except ValueError:
        raise ConfigError(f"{source}: cursor.step must be an integer") from None
    if mode is PaginationMode.INCREMENTAL:
        try:
            int(cursor_initial)
        except ValueError:
            raise ConfigError(f"{source}: cursor.initial must be an integer for INCREMENTAL") from None

    cursor_anchor = entries.get("cursor.anchor", "record")
    if cursor_anchor not in ("record", "page"):
        raise ConfigError(f"{source}: cursor.anchor must be 'record' or 'page'")

    try:
        retry_count = int(entries.get("retry.count", "0"))
    except ValueError:
        raise ConfigError(f"{source}: retry.count must be an integer") from None

    properties = {k[len("url.properties."):]: v for k, v in entries.items() if k.startswith("url.properties.")}
    headers = {k[len("url.headers."):]: v for k, v in entries.items() if k.startswith("url.headers.")}

    return ConnectorConfig(
        name=entries.get("name", fallback_name),
        url_base=entries["url.base"],
        mode=mode,
        url_properties=properties,
        url_headers=headers,
        limit=limit,
        records_path=parse_path(entries.get("records.path", DEFAULT_RECORDS_PATH)),
        cursor_path=parse_path(entries["cursor.path"]) if "cursor.path" in entries else None,
        cursor_param=entries.get("cursor.param"),
        cursor_initial=cursor_initial,
        cursor_step=cursor_step,
        cursor_anchor=cursor_anchor,
        date_start_key=entries.get("date.start"),
        date_end_key=entries.get("date.end"),
        date_format=entries.get("date.format", DEFAULT_DATE_FORMAT),
        retry_count=retry_count,
    )


def load_config(path: str | Path) -> ConnectorConfig:
    """Load and validate one protocol definition from a properties file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    entries = parse_properties(path.read_text(encoding="utf-8"), source=str(path))
    return build_config(entries, fallback_name=path.stem, source=str(path))


def load_config_dir(directory: str | Path) -> list[ConnectorConfig]:
    """Load every ``*.properties`` file in ``directory``, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"config directory not found: {directory}")
    return [load_config(p) for p in sorted(directory.glob("*.properties"))]
