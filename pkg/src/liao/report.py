"""Byte-stable JSON and CSV writers.

Keys are sorted, floats are written with 17 significant digits, lines end
with ``\\n`` and files are UTF-8. Non-finite floats become ``null`` in JSON.
"""

import csv
import json
import math

import numpy as np


def _float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    # keep a float marker so the value round-trips as a float
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + \
            "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # strict JSON has no NaN or Infinity
        return _float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent=2):
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def omega_csv(path, cocycle):
    p = cocycle.dim
    write_csv(path, ["t"] + [f"omega_{i + 1}" for i in range(p)],
              [[float(v) for v in row] for row in cocycle.omega_rows()])


def emit_report(results, path, fmt="json"):
    """Write ``results`` as JSON (a mapping) or CSV (a ``(header, rows)`` pair)."""
    if fmt == "json":
        write_json(path, results)
    elif fmt == "csv":
        header, rows = results
        write_csv(path, header, rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
