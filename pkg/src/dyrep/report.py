"""Canonical JSON and CSV emission (byte-stable for identical inputs)."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .exceptions import InputError

NORM_HEADER = ("k", "norm_R", "norm_Q", "norm_Q_over_sqrt_k")


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"  # folds -0.0
    return format(x, ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad, inner = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        s = format_float(obj)
        # non-finite values are not JSON numbers; keep them as strings
        return json.dumps(s) if s in ("nan", "inf", "-inf") else s
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = ",\n".join(f"{inner}{json.dumps(k, ensure_ascii=False)}: {_encode(v, indent, level + 1)}"
                          for k, v in items)
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        body = ",\n".join(inner + _encode(v, indent, level + 1) for v in obj)
        return "[\n" + body + "\n" + pad + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def canonical_json(obj, indent: int = 2) -> str:
    """Sorted keys, 17 significant digits, trailing newline."""
    return _encode(obj, indent, 0) + "\n"


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"{path}: cannot write report ({exc.strerror})") from None
    return path


def emit_report(results: dict, out_dir, name: str, fmt: str = "json", table=None) -> Path:
    """Write ``name.json`` or ``name.csv``; ``table`` is ``(header, rows)`` for CSV."""
    out_dir = Path(out_dir)
    if fmt == "json":
        return _write(out_dir / f"{name}.json", canonical_json(results))
    if fmt == "csv":
        if table is None:
            raise InputError(f"{name} has no tabular form; use --format json")
        header, rows = table
        return _write(out_dir / f"{name}.csv", csv_text(header, rows))
    raise InputError(f"unknown format {fmt!r}")


def norm_table(rows) -> tuple[tuple, list]:
    return NORM_HEADER, [(r.k, r.norm_R, r.norm_Q, r.norm_Q_over_sqrt_k) for r in rows]
