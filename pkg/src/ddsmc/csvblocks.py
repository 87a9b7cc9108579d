"""Plain-text container for named matrices, scalars and strings.

Layout, one record per line::

    # free comment (ignored on read)
    matrix,<name>,<rows>,<cols>
    <rows> lines of <cols> comma-separated floats
    scalar,<name>,<float>
    text,<name>,<string without newlines>

Floats use ``repr`` so that a write/read round trip is bit-exact.
"""

from __future__ import annotations

import datetime as _dt
from pathlib import Path

import numpy as np

from .errors import FormatError


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps(
    matrices: dict[str, np.ndarray] | None = None,
    scalars: dict[str, float] | None = None,
    texts: dict[str, str] | None = None,
    title: str | None = None,
    timestamp: bool = True,
) -> str:
    lines = []
    if timestamp:
        now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        lines.append(f"# created {now}")
    if title:
        lines.append(f"# {title}")
    for name, value in (texts or {}).items():
        value = str(value)
        if "\n" in value or "\r" in value:
            raise ValueError(f"text field {name!r} must be a single line")
        lines.append(f"text,{name},{value}")
    for name, value in (scalars or {}).items():
        lines.append(f"scalar,{name},{_fmt(value)}")
    for name, mat in (matrices or {}).items():
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        rows, cols = mat.shape
        lines.append(f"matrix,{name},{rows},{cols}")
        for row in mat:
            lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[dict[str, np.ndarray], dict[str, float], dict[str, str]]:
    matrices: dict[str, np.ndarray] = {}
    scalars: dict[str, float] = {}
    texts: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        kind, _, rest = line.partition(",")
        if kind == "text":
            name, sep, value = rest.partition(",")
            if not sep or not name:
                raise FormatError("text record needs a name and a value", lineno)
            texts[name] = value
        elif kind == "scalar":
            parts = rest.split(",")
            if len(parts) != 2:
                raise FormatError("scalar record needs exactly a name and a value", lineno)
            scalars[parts[0]] = _parse_float(parts[1], lineno, parts[0])
        elif kind == "matrix":
            parts = rest.split(",")
            if len(parts) != 3:
                raise FormatError("matrix header must be matrix,<name>,<rows>,<cols>", lineno)
            name = parts[0]
            try:
                rows, cols = int(parts[1]), int(parts[2])
            except ValueError:
                raise FormatError(f"matrix {name!r}: rows/cols must be integers", lineno) from None
            if rows < 0 or cols < 0:
                raise FormatError(f"matrix {name!r}: negative dimensions", lineno)
            if i + rows > len(lines):
                raise FormatError(f"matrix {name!r}: expected {rows} rows, file ends early", lineno)
            mat = np.empty((rows, cols))
            for r in range(rows):
                row_lineno = i + 1
                fields = lines[i].strip().split(",") if cols else []
                i += 1
                if len(fields) != cols:
                    raise FormatError(
                        f"matrix {name!r} row {r}: expected {cols} columns, got {len(fields)}",
                        row_lineno,
                    )
                for c, field in enumerate(fields):
                    mat[r, c] = _parse_float(field, row_lineno, f"{name}[{r},{c}]")
            matrices[name] = mat
        else:
            raise FormatError(f"unknown record type {kind!r}", lineno)
    return matrices, scalars, texts


def _parse_float(field: str, lineno: int, what: str) -> float:
    try:
        return float(field)
    except ValueError:
        raise FormatError(f"{what}: cannot parse {field!r} as a number", lineno) from None


def write(path, **kwargs) -> None:
    Path(path).write_text(dumps(**kwargs))


def read(path):
    return loads(Path(path).read_text())
