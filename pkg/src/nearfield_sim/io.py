"""CSV and JSON writers shared by the command-line front end.

Floats are written with ``repr`` so files are byte-stable across runs.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import __version__


def tag_line(scenario_hash: str) -> str:
    return f"# nearfield_sim {__version__} scenario={scenario_hash}"


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows, scenario_hash: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(tag_line(scenario_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    """Returns (tag line, header, rows of strings)."""
    with open(path, newline="") as fh:
        tag = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    return tag, rows[0], rows[1:]


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path
