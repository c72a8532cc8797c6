"""Plain-text serialization of float64 arrays.

Layout::

    shape: d1 d2 ... dk
    v,v,v,...          <- one line per row of the (prod(d1..dk-1), dk) view

Values are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def format_value(v: float) -> str:
    return "%.17g" % v


def format_tensor(arr) -> str:
    arr = np.asarray(arr, dtype=np.float64)
    shape = arr.shape if arr.ndim else (1,)
    lines = ["shape: " + " ".join(str(d) for d in shape)]
    rows = arr.reshape(-1, shape[-1]) if arr.size else np.zeros((0, shape[-1]))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_tensor(lines: list[str], start: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor from ``lines[start:]``.  Returns ``(array, next_index)``.

    Line numbers in errors are 1-based positions in ``lines``.
    """
    if start >= len(lines):
        raise ParseError("expected 'shape:' header, found end of input", start + 1)
    header = lines[start].strip()
    if not header.startswith("shape:"):
        raise ParseError(f"expected 'shape:' header, got {header!r}", start + 1)
    try:
        shape = tuple(int(t) for t in header[len("shape:"):].split())
    except ValueError:
        raise ParseError(f"bad shape header {header!r}", start + 1) from None
    if not shape or any(d <= 0 for d in shape):
        raise ParseError(f"shape must be positive integers, got {shape}", start + 1)
    ncols = shape[-1]
    nrows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    data = np.empty((nrows, ncols))
    for r in range(nrows):
        idx = start + 1 + r
        if idx >= len(lines):
            raise ParseError(f"expected {nrows} rows, input ended after {r}", idx + 1)
        parts = lines[idx].strip().split(",")
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, got {len(parts)}", idx + 1)
        try:
            data[r] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in row {lines[idx].strip()!r}", idx + 1) from None
    return data.reshape(shape), start + 1 + nrows


def save_tensor(path, arr) -> None:
    Path(path).write_text(format_tensor(arr))


def load_tensor(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    arr, end = parse_tensor(lines)
    if any(line.strip() for line in lines[end:]):
        raise ParseError("trailing content after tensor", end + 1)
    return arr
