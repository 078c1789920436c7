"""JSON writer that emits every float with 17 significant digits.

The output parses back to the same doubles, so serialise -> parse -> serialise
is byte-identical.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import NonFiniteValue


def _float(x: float) -> str:
    if not math.isfinite(x):
        raise NonFiniteValue(f"cannot serialise non-finite float {x}")
    s = "%.17g" % x
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent, level, out):
    pad = " " * (indent * (level + 1)) if indent else ""
    end = " " * (indent * level) if indent else ""
    nl = "\n" if indent else ""
    sep = ": " if indent else ":"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append({None: "null", True: "true", False: "false"}[None if obj is None else bool(obj)])
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), indent, level, out)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{" + nl)
        for k, (key, val) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(key), ensure_ascii=False) + sep)
            _encode(val, indent, level + 1, out)
            out.append(("," if k < len(obj) - 1 else "") + nl)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        # numeric rows stay on one line to keep dumps readable
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        if flat or not indent:
            parts = []
            for v in obj:
                sub = []
                _encode(v, 0, 0, sub)
                parts.append("".join(sub))
            out.append("[" + (", " if indent else ",").join(parts) + "]")
            return
        out.append("[" + nl)
        for k, v in enumerate(obj):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(("," if k < len(obj) - 1 else "") + nl)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 0) -> str:
    out: list = []
    _encode(obj, indent, 0, out)
    return "".join(out)
