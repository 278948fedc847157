"""Canonical JSON emission for byte-stable artifact files.

All on-disk JSON documents (device files, event maps, manifests, reports)
go through :func:`dumps_canonical` so that identical in-memory values always
produce identical bytes: floats are written with 17 significant digits
(lossless for IEEE-754 doubles), keys keep insertion order, and layout is
compact with a single trailing newline.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def _emit(obj: Any, parts: list) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            raise ValueError("non-finite float cannot be serialized to JSON: %r" % x)
        parts.append(format(x, ".17g"))
    elif isinstance(obj, dict):
        parts.append("{")
        first = True
        for key, value in obj.items():
            if not isinstance(key, str):
                raise TypeError("JSON object keys must be strings, got %r" % (key,))
            if not first:
                parts.append(",")
            parts.append(json.dumps(key, ensure_ascii=False))
            parts.append(":")
            _emit(value, parts)
            first = False
        parts.append("}")
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts)
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _emit(value, parts)
        parts.append("]")
    elif isinstance(obj, np.bool_):
        parts.append("true" if bool(obj) else "false")
    else:
        raise TypeError("cannot serialize %r (%s)" % (obj, type(obj).__name__))


def dumps_canonical(obj: Any) -> str:
    parts: list = []
    _emit(obj, parts)
    parts.append("\n")
    return "".join(parts)


def write_canonical(path, obj: Any) -> None:
    text = dumps_canonical(obj)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
