"""File output helpers: atomic writes, versioned CSV tables, JSON, run manifests."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
import platform
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

SCHEMA_PREFIX = "#schema="
SCHEMAS = {
    "dataset": 1,
    "influence": 1,
    "weights": 1,
    "loo": 1,
    "benchmark": 1,
    "sweep": 1,
    "metrics": 1,
}


def fmt(x) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_table(path, schema: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    buf.write(f"{SCHEMA_PREFIX}{schema}/{SCHEMAS[schema]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_schema_line(first_line: str, expected: str | None = None) -> tuple[str, int] | None:
    """Parse a ``#schema=name/version`` line; None when the line is not one."""
    if not first_line.startswith(SCHEMA_PREFIX):
        return None
    tag = first_line[len(SCHEMA_PREFIX):].strip()
    try:
        name, version = tag.split("/")
        version = int(version)
    except ValueError:
        raise DataError(f"malformed schema tag {tag!r}") from None
    if name not in SCHEMAS or SCHEMAS[name] != version:
        raise DataError(f"unsupported schema {tag!r}")
    if expected is not None and name != expected:
        raise DataError(f"expected a {expected!r} file, got schema {tag!r}")
    return name, version


def read_table(path, schema: str) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if read_schema_line(first, schema) is None:
            raise DataError(f"{path}: missing schema line for {schema!r}")
        return list(csv.DictReader(fh))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def write_json(path, payload) -> Path:
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n"
    return atomic_write_text(path, text)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_manifest(out_dir, command: str, argv: list[str], config: dict, outputs: list[str],
                   timings: dict | None = None) -> Path:
    """Everything needed to re-run a command; the only place timestamps and
    wall-clock timings appear, so payload files stay byte-reproducible."""
    from . import __version__, _backend

    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "outputs": sorted(outputs),
        "versions": {
            "softunlearn": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "platform": platform.platform(),
            "kernel_backend": _backend.BACKEND,
        },
        "timings_seconds": dict(timings or {}),
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return write_json(Path(out_dir) / f"manifest.{command}.json", manifest)
