"""
JSONL storage utilities for the CAPE-KG engine.
Handles all file persistence with atomic writes and thread safety.
"""
import json
import os
import tempfile
from contextlib import contextmanager
from threading import Lock

from .errors import ParseError

# Thread-safe lock for file writes
storage_lock = Lock()


def dumps(obj):
    """Canonical one-line JSON used everywhere we persist or print."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


@contextmanager
def jsonl_writer(path):
    """
    Context manager yielding a write(obj) callable.
    Lines go to a temp file that replaces `path` only if the block succeeds.
    """
    with storage_lock:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)

        fd, tmp_path = tempfile.mkstemp(prefix=".capekg-", suffix=".tmp", dir=directory)
        handle = os.fdopen(fd, "w", encoding="utf-8")

        def write(obj):
            handle.write(dumps(obj))
            handle.write("\n")

        try:
            yield write
            handle.close()
            os.replace(tmp_path, path)
        except Exception:
            handle.close()
            os.unlink(tmp_path)
            raise


def write_jsonl(path, rows):
    """Write an iterable of JSON objects, one per line. Returns the row count."""
    count = 0
    with jsonl_writer(path) as write:
        for row in rows:
            write(row)
            count += 1
    return count


def read_jsonl(path):
    """
    Yield (line_number, object) for every non-blank line.
    Raises ParseError with the line number on malformed JSON or bad UTF-8.
    """
    try:
        handle = open(path, "rb")
    except OSError as e:
        raise ParseError(f"cannot read file: {e.strerror}", path=path) from e

    with handle:
        for line_no, raw in enumerate(handle, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"invalid UTF-8 at byte {e.start}", line=line_no, path=path) from e
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", line=line_no, path=path) from e


def read_json(path):
    """Load a whole JSON document."""
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as e:
        raise ParseError(f"cannot read file: {e.strerror}", path=path) from e
    try:
        return json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        line = raw[:e.start].count(b"\n") + 1
        raise ParseError("invalid UTF-8", line=line, path=path) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON ({e.msg})", line=e.lineno, path=path) from e
