"""Deterministic JSON/CSV serialization for reports.

Floats are written with 17 significant digits (bit-exact round trip),
infinities as the strings "inf"/"-inf", complex numbers as {"re", "im"}.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, is_dataclass

import numpy as np


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def normalize(obj):
    """Reduce numpy scalars/arrays, dataclasses and complex numbers to plain JSON-like values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return normalize(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [normalize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _emit(normalize(obj), indent, 0) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return _float(v).strip('"')
    if isinstance(v, dict) and set(v) == {"re", "im"}:
        return f"{_float(v['re']).strip(chr(34))}{'+' if v['im'] >= 0 else ''}{_float(v['im']).strip(chr(34))}j"
    return str(v)


def _flatten(obj, prefix: str = ""):
    if isinstance(obj, dict) and not (set(obj) == {"re", "im"}):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def to_csv(report: dict) -> str:
    """CSV view: the ``table`` rows when present, otherwise flattened key/value pairs."""
    rep = normalize(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    rows = rep.get("table") if isinstance(rep, dict) else None
    if rows:
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    else:
        w.writerow(["key", "value"])
        for k, v in _flatten(rep):
            w.writerow([k, _cell(v) if not isinstance(v, list) else " ".join(_cell(x) for x in v)])
    return buf.getvalue()
