"""Serialization of run artifacts: sorted-key UTF-8 JSON and RFC-4180 CSV.

Floats are written with ``repr`` (shortest round-trip form), so a repeated
computation that produces the same numbers produces the same bytes.
Non-finite floats become the strings ``"nan"``, ``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np


def plain(obj):
    """Recursively convert numpy scalars/arrays and dataclasses to JSON-ready values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": plain(obj.real), "im": plain(obj.imag)}
    return obj


def dumps(obj, indent=1) -> str:
    return json.dumps(plain(obj), sort_keys=True, ensure_ascii=False, indent=indent)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """CSV with CRLF line ends and minimal quoting."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])
    return path


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


BRANCH_COLUMNS = ("a", "lambda", "beta", "sup_norm", "morse_index", "is_fold")


def write_branch_csv(branch, path) -> Path:
    """One row per branch point; refined folds carry ``is_fold = 1``."""
    rows = []
    for p in branch.points:
        r = p.row()
        rows.append([r[c] for c in BRANCH_COLUMNS])
    return write_csv(path, BRANCH_COLUMNS, rows)


PROFILE_COLUMNS = ("r", "u", "du", "v", "dv")


def write_profile_csv(p, path) -> Path:
    return write_csv(path, PROFILE_COLUMNS, zip(p.grid, p.u, p.du, p.v, p.dv))


def write_reports(reports, path) -> Path:
    """JSON lines, one report per line, keys sorted."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")
    return path


def read_reports(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
