"""CSV tables and JSON summaries written by the command-line tool.

Tables have a header row and a fixed column order; every numeric cell is
written with ``repr`` so that reading it back gives the identical float.
Summaries are JSON documents whose ``metadata`` block carries the volatile
fields (timestamps, timings) so the remaining content is reproducible.
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Sequence

import numpy as np

from . import __version__

__all__ = ["write_table", "read_table", "write_summary", "read_summary", "metadata", "to_jsonable"]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if not math.isfinite(f):
        raise ValueError(f"non-finite value {f!r} cannot go into a table")
    return repr(f)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write ``rows`` under ``header``; fails on ragged rows or non-finite cells."""
    header = list(header)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            row = list(row)
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
            w.writerow([_cell(v) for v in row])
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_table(path) -> Dict[str, np.ndarray]:
    """Columns of a table written by :func:`write_table`, in file order."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(c) for c in row] for row in r]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return {name: arr[:, k] for k, name in enumerate(header)}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no infinity; the infeasible marker is spelled out
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return obj


def metadata(config: dict, **extra) -> dict:
    meta = {
        "counterspec_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config,
    }
    meta.update(extra)
    return meta


def write_summary(path, summary: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(to_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def column_block(prefix: str, size: int) -> List[str]:
    return [f"{prefix}_{k}" for k in range(size)]
