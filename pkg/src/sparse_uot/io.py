"""File formats: numeric CSV matrices, weight lists, COO plans and flat config files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .problem import SUPPORT_TOL, SparsePlan, SupportSet

COO_HEADER = "i,j,value"


def _parse_float(tok):
    val = float(tok)
    if not np.isfinite(val):
        raise ValueError(f"non-finite value {tok!r}")
    return val


def read_matrix(path) -> np.ndarray:
    """Numeric CSV, one row per line. A non-numeric first row is treated as a header."""
    path = Path(path)
    rows = []
    width = None
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            fields = [f.strip() for f in fields]
            if not fields or all(f == "" for f in fields):
                continue
            try:
                vals = [_parse_float(f) for f in fields]
            except ValueError as exc:
                if not rows and width is None:
                    width = len(fields)  # header row
                    continue
                raise ParseError(str(exc), path, lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} columns, found {len(vals)}", path, lineno)
            rows.append(vals)
    if not rows:
        raise ParseError("no numeric rows", path)
    return np.asarray(rows, dtype=float)


def read_points(path) -> np.ndarray:
    return read_matrix(path)


def read_weights(path) -> np.ndarray:
    """One nonnegative value per line."""
    w = read_matrix(path)
    if w.shape[1] != 1:
        raise ParseError(f"weights file must have a single column, found {w.shape[1]}", path)
    w = w[:, 0]
    if np.any(w < 0):
        raise ParseError("weights must be nonnegative", path)
    return w


def write_matrix(path, M, fmt="%.17g"):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt=fmt)


def format_coo(plan: SparsePlan, tol: float = SUPPORT_TOL) -> str:
    """COO text: header ``i,j,value`` then entries above ``tol`` sorted by (i, j).

    Values use the shortest round-trip float representation.
    """
    lines = [COO_HEADER]
    order = np.argsort(plan.support.linear, kind="stable")
    n = plan.shape[1]
    for idx in order:
        v = float(plan.values[idx])
        if v > tol:
            i, j = divmod(int(plan.support.linear[idx]), n)
            lines.append(f"{i},{j},{v!r}")
    return "\n".join(lines) + "\n"


def write_coo(path, plan: SparsePlan, tol: float = SUPPORT_TOL):
    Path(path).write_text(format_coo(plan, tol))


def read_coo(path, shape) -> SparsePlan:
    path = Path(path)
    entries = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and line.replace(" ", "") == COO_HEADER:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError("expected 'i,j,value'", path, lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            entries.append((i, j, v))
    try:
        support = SupportSet([(i, j) for i, j, _ in entries], shape)
        return SparsePlan(support, [v for _, _, v in entries])
    except InputError as exc:
        raise ParseError(str(exc), path) from None


def read_config(path) -> dict:
    """Flat ``key=value`` text; ``#`` starts a comment. Keys are normalized to snake_case."""
    path = Path(path)
    out = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key=value", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", path, lineno)
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
