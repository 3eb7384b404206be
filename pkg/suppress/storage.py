# ============================================
#   Suppress — File persistence
#   Atomic writes + canonical JSON (orjson)
# ============================================

import os

import orjson
import pandas as pd

from suppress.errors import IoError, ParseError
from suppress.logger import log_debug

# Sorted keys + fixed indent: same content → same bytes.
_JSON_OPTIONS = (
    orjson.OPT_INDENT_2
    | orjson.OPT_SORT_KEYS
    | orjson.OPT_SERIALIZE_NUMPY
    | orjson.OPT_APPEND_NEWLINE
)


# =====================================================
#   JSON CODEC
# =====================================================

def dumps(payload) -> bytes:
    return orjson.dumps(payload, option=_JSON_OPTIONS)


def loads(text, what: str = "JSON"):
    """
    Decode JSON text/bytes. Malformed input raises ParseError naming `what`.
    """
    try:
        return orjson.loads(text)
    except orjson.JSONDecodeError as e:
        raise ParseError(f"{what}: malformed JSON ({e})") from e


# =====================================================
#   ATOMIC WRITES
# =====================================================

def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_bytes(path: str, data: bytes) -> str:
    """
    Atomic write to avoid half-written artifacts:
    write temp file then os.replace().
    """
    if not path:
        raise IoError("Missing path")

    tmp_path = f"{path}.tmp"
    try:
        _ensure_parent(path)
        with open(tmp_path, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except OSError as e:
        # Try cleanup tmp, but never mask the original failure
        try:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
        except OSError:
            pass
        raise IoError(f"Cannot write {path}: {e}") from e

    log_debug("storage", f"Wrote {path} ({len(data)} bytes).")
    return path


def write_json(path: str, payload) -> str:
    return write_bytes(path, dumps(payload))


def write_table_csv(path: str, rows, columns=None) -> str:
    """
    Write a list of dicts as CSV (pandas), atomically.
    """
    frame = pd.DataFrame(list(rows), columns=columns)
    return write_bytes(path, frame.to_csv(index=False).encode("utf-8"))


# =====================================================
#   READS
# =====================================================

def read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e


def read_json(path: str):
    return loads(read_bytes(path), what=path)
