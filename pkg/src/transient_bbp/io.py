"""CSV / JSON writers and grid-spec parsing shared by the command line."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

OUT_ENV = "TRANSIENT_BBP_OUT"
DEFAULT_OUT = "bbp_out"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        # 17 significant digits round-trip any double
        return "%.17g" % float(v)
    return str(v)


def write_table(path, header, rows) -> Path:
    """Comma-separated file, header first; ``rows`` must match the header arity."""
    path = Path(path)
    header = list(header)
    rows = list(rows)
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise InvalidArgumentError(
                f"row {i} has {len(r)} fields, header has {len(header)}"
            )
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return path


def read_table(path):
    """Inverse of write_table for numeric columns; returns (header, list of rows)."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [list(row) for row in r]
    return header, rows


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def dumps(document) -> str:
    return json.dumps(jsonable(document), ensure_ascii=False, allow_nan=False)


def write_summary(path, document) -> Path:
    """UTF-8 JSON; key order is preserved, non-finite floats become null."""
    path = Path(path)
    text = json.dumps(jsonable(document), ensure_ascii=False, allow_nan=False, indent=2)
    try:
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return path


def output_dir(arg=None) -> Path:
    d = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {d}: {exc.strerror}") from exc
    return d


def parse_grid(spec: str) -> np.ndarray:
    """``lo:hi:step`` -> inclusive arithmetic grid."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise InvalidArgumentError(f"grid must be lo:hi:step, got {spec!r}") from None
    if not (step > 0 and hi > lo):
        raise InvalidArgumentError(f"grid needs hi > lo and step > 0, got {spec!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def parse_times(spec: str) -> np.ndarray:
    """``log:a:b:n`` or ``lin:a:b:n``; a bare comma list is also accepted."""
    parts = spec.split(":")
    if len(parts) == 4 and parts[0] in ("log", "lin"):
        try:
            a, b, n = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise InvalidArgumentError(f"bad grid spec {spec!r}") from None
        if n < 1 or b < a or (n > 1 and b == a):
            raise InvalidArgumentError(f"bad grid spec {spec!r}")
        if parts[0] == "log":
            if a <= 0:
                raise InvalidArgumentError(f"log grid needs a positive start, got {spec!r}")
            return np.geomspace(a, b, n)
        return np.linspace(a, b, n)
    try:
        vals = np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise InvalidArgumentError(
            f"expected log:a:b:n, lin:a:b:n or a comma list, got {spec!r}"
        ) from None
    return vals
