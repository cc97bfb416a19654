"""CSV writers shared by the rate, dynamics, heat and CLI outputs.

Numbers are written with 17 significant digits and '.' as decimal separator;
an optional first line ``# {json}`` carries metadata and the next line is the
header with units. Every file is written atomically (temporary file, then rename).
"""
from __future__ import annotations

import json

import numpy as np

from .expfit import atomic_write_text

__all__ = ["format_number", "write_csv", "read_csv", "write_matrix_csv", "write_json"]


def format_number(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows, meta=None):
    """Write ``rows`` (iterables of numbers or strings) under ``header``."""
    lines = []
    if meta is not None:
        lines.append("# " + json.dumps(meta, sort_keys=True, default=str))
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_number(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Return ``(meta, header, data)`` with data as a float array."""
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            s = line.rstrip("\n")
            if s.startswith("#"):
                meta = json.loads(s[1:])
            elif header is None:
                header = s.split(",")
            elif s:
                rows.append([float(x) for x in s.split(",")])
    return meta, header, np.array(rows, dtype=float).reshape(len(rows), len(header or []))


def write_matrix_csv(path, matrix, meta=None):
    """Row-major matrix dump with a (Re, Im) column pair per matrix column."""
    m = np.asarray(matrix, dtype=complex)
    header = []
    for j in range(m.shape[1]):
        header += [f"re_{j}", f"im_{j}"]
    rows = [[x for z in row for x in (z.real, z.imag)] for row in m]
    write_csv(path, header, rows, meta)


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
