"""Canonical JSON serialization for reproducible file outputs.

Floats are rendered with 17 significant digits (round-trip exact for IEEE
doubles), object keys are emitted in sorted order, and no locale-dependent
formatting is involved, so repeated runs with identical inputs produce
byte-identical files on any platform.
"""
from __future__ import annotations

import json
import math
from typing import Any


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite float cannot be serialized")
    if x == 0.0:
        return "0.0"  # avoid -0.0 leaking into output
    s = format(float(x), ".17g")
    # keep an explicit float marker so the value re-parses as float
    if "e" not in s and "E" not in s and "." not in s:
        s += ".0"
    return s


def dumps_canonical(obj: Any) -> str:
    out: list[str] = []
    _write(obj, out)
    return "".join(out)


def _write(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        out.append("{")
        keys = sorted(obj.keys())
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be str, got {type(k)!r}")
            if i:
                out.append(", ")
            out.append(json.dumps(k, ensure_ascii=True))
            out.append(": ")
            _write(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _write(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dump_canonical(obj: Any, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def load_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
