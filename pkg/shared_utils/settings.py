"""Runtime settings read from the environment (and an optional ``.env`` file)."""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from protocol import Document, parse_document
from protocol.errors import ConfigError, ProtocolSyntaxError

LOG_FORMAT = "%(asctime)s %(name)s - %(levelname)s - %(message)s"


class Settings(BaseModel):
    """Process-wide knobs; every field maps to one ``ACWP_*`` variable."""

    schema_path: List[Path] = Field(default_factory=list, description="Schema files or directories")
    max_frame_bytes: int = Field(default=1024 * 1024, gt=0)
    ack_deadline_ms: int = Field(default=2000, gt=0)
    request_timeout_ms: int = Field(default=5000, gt=0)
    bridge_buffer: int = Field(default=10000, gt=0)
    sweep_interval_ms: int = Field(default=100, gt=0)
    debug: bool = False
    verbose: bool = False


def _flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


def load_settings(env_file: Optional[Path] = None) -> Settings:
    """Load ``.env`` (repo root unless given) and build :class:`Settings`."""
    env_file = env_file or Path(__file__).parent.parent / ".env"
    if env_file.exists():
        load_dotenv(env_file)

    raw_path = os.getenv("ACWP_SCHEMA_PATH", "")
    return Settings(
        schema_path=[Path(p) for p in raw_path.split(os.pathsep) if p],
        max_frame_bytes=int(os.getenv("ACWP_MAX_FRAME_BYTES", "1048576")),
        ack_deadline_ms=int(os.getenv("ACWP_ACK_DEADLINE_MS", "2000")),
        request_timeout_ms=int(os.getenv("ACWP_REQUEST_TIMEOUT_MS", "5000")),
        bridge_buffer=int(os.getenv("ACWP_BRIDGE_BUFFER", "10000")),
        sweep_interval_ms=int(os.getenv("ACWP_SWEEP_INTERVAL_MS", "100")),
        debug=_flag("ACWP_DEBUG"),
        verbose=_flag("ACWP_VERBOSE"),
    )


def setup_logging(debug: bool = False) -> None:
    # Diagnostics go to stderr; stdout stays machine-readable for the CLI.
    logging.basicConfig(level=logging.DEBUG if debug else logging.WARNING, format=LOG_FORMAT)


def parse_endpoint(text: str) -> Tuple[str, int]:
    """``host:port`` -> (host, port)."""
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ValueError(f"bad endpoint {text!r}, expected host:port")
    return host, int(port)


# --- config files -----------------------------------------------------------------

def nest_document(doc: Document) -> Dict[str, Any]:
    """Turn flat dotted paths into dicts; all-index levels become lists."""
    root: Dict[str, Any] = {}
    for path, value in doc.items():
        segments = path.split(".")
        node = root
        for seg in segments[:-1]:
            node = node.setdefault(seg, {})
            if not isinstance(node, dict):
                raise ConfigError("value and subtree share a path", location=path)
        if isinstance(node.get(segments[-1]), dict):
            raise ConfigError("value and subtree share a path", location=path)
        node[segments[-1]] = value
    return _listify(root)


def _listify(node: Any) -> Any:
    if not isinstance(node, dict):
        return node
    items = {k: _listify(v) for k, v in node.items()}
    if items and all(k.isdigit() for k in items):
        return [items[k] for k in sorted(items, key=int)]
    return items


ConfigModel = TypeVar("ConfigModel", bound=BaseModel)


def load_config_document(path: Path, model: Type[ConfigModel]) -> ConfigModel:
    """Parse a Document-grammar config file into ``model``; errors name the location."""
    path = Path(path)
    try:
        doc = parse_document(path.read_bytes())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", location=str(path)) from e
    except ProtocolSyntaxError as e:
        raise ConfigError(e.message, location=f"{path}:{e.line}" if e.line else str(path)) from e
    try:
        return model.model_validate(nest_document(doc))
    except ConfigError as e:
        raise ConfigError(e.message, location=f"{path}") from e
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(first["msg"], location=f"{path}:{where}") from e


def resolve_relative(base: Path, entries: List[Path]) -> List[Path]:
    """Paths inside a config file are relative to the file's directory."""
    return [p if p.is_absolute() else (base.parent / p) for p in entries]
