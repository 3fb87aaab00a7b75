"""Utility functions for float formatting, fingerprints, CSV and binary artifacts."""

import csv
import hashlib
import io
import math
import struct
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .errors import CorruptFile, IoError, ParseError


def format_float(value: float) -> str:
    """Format a float with full round-trip precision.

    ``repr`` of a Python float is the shortest string that parses back
    to the same double, so ``float(format_float(x)) == x`` always holds.
    """
    return repr(float(value))


def fingerprint(data: str | bytes) -> str:
    """Return the SHA-256 hex digest of bytes or a UTF-8 string."""
    raw = data.encode("utf-8") if isinstance(data, str) else data
    return hashlib.sha256(raw).hexdigest()


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolated percentile (``q`` in [0, 100]); NaN for empty input."""
    if len(values) == 0:
        return math.nan
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))


def ensure_parent(path: str | Path) -> Path:
    """Create the parent directory of ``path`` and return it as a Path."""
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(p.parent), str(exc)) from exc
    return p


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Render rows as CSV text with ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Write a CSV artifact; floats are written with round-trip precision."""
    p = ensure_parent(path)
    try:
        p.write_text(render_csv(header, rows), encoding="utf-8")
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    return p


def read_text(path: str | Path) -> str:
    """Read a UTF-8 text artifact.

    Undecodable bytes raise ParseError naming the path, the line and the
    byte offset of the first bad byte.
    """
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data.count(b"\n", 0, exc.start) + 1
        raise ParseError(line, f"{p}: invalid UTF-8 at byte offset {exc.start} ({exc.reason})") from exc


def read_csv(path: str | Path, expected_header: Sequence[str] | None = None) -> tuple[list[str], list[list[str]]]:
    """Read a CSV artifact and return ``(header, rows)``.

    When ``expected_header`` is given the file's header must match it.
    """
    p = Path(path)
    text = read_text(p)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise ParseError(1, f"{p}: empty CSV file, header missing") from exc
    if expected_header is not None and list(header) != list(expected_header):
        raise ParseError(1, f"{p}: expected header {','.join(expected_header)!r}, found {','.join(header)!r}")
    rows = [row for row in reader if row]
    return header, rows


class ByteReader:
    """Sequential little-endian reader over a binary artifact."""

    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CorruptFile(self.offset, f"truncated while reading {what}", self.path)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    @property
    def done(self) -> bool:
        return self.offset >= len(self.data)
