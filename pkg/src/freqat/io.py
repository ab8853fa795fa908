"""Atomic file output and the CSV dialect shared by all result files."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def write_atomic(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        os.fchmod(fd, 0o644)
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    # repr round-trips exactly and never uses a locale decimal separator
    return repr(float(x))


def csv_bytes(
    header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()
) -> bytes:
    """Render ``# comment`` lines, a header row, then data rows as UTF-8."""
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue().encode("utf-8")


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]], list[str]]:
    """Inverse of :func:`csv_bytes`: returns (header, rows, comments)."""
    comments, body = [], []
    with open(path, encoding="utf-8", newline="") as f:
        for line in f:
            if line.startswith("# ") and not body:
                comments.append(line[2:].rstrip("\n"))
            else:
                body.append(line)
    rows = list(csv.reader(body))
    return rows[0], rows[1:], comments
