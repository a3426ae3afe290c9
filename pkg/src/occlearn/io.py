"""Dataset files and experiment CSVs.

Dataset files start with ``# occ-learn v1 dim=<D> n=<N>`` followed by one
point per line, coordinates comma-separated and written with ``repr`` so
they read back bit for bit.
"""

from __future__ import annotations

import contextlib
import csv
import re
import sys
from typing import Iterable, Sequence

import numpy as np

from .experiments import RejectionRecord, ScalingRow

HEADER_RE = re.compile(r"^# occ-learn v1 dim=(\d+) n=(\d+)\s*$")
REJECTION_FIELDS = ("algorithm", "n", "pb", "trial", "proposed", "accepted", "rejected")
SCALING_FIELDS = ScalingRow._fields
TRACE_FIELDS = ("iteration", "index", "epoch", "processor", "proposed", "rank", "accepted")


class DatasetFormatError(ValueError):
    pass


def save_dataset(path, points) -> None:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# occ-learn v1 dim={X.shape[1]} n={X.shape[0]}\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_dataset(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        m = HEADER_RE.match(header)
        if not m:
            raise DatasetFormatError(f"{path}: bad header {header.strip()!r}")
        dim, n = int(m.group(1)), int(m.group(2))
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if len(vals) != dim:
                raise DatasetFormatError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if len(rows) != n:
        raise DatasetFormatError(f"{path}: header says n={n} but found {len(rows)} points")
    return np.array(rows, dtype=np.float64).reshape(n, dim)


def _write_csv(path, fields: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="ascii") if path != "-" else _stdout() as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def _stdout():
    return contextlib.nullcontext(sys.stdout)


def write_rejections(path, records: Iterable[RejectionRecord]) -> None:
    _write_csv(path, REJECTION_FIELDS, (r[:len(REJECTION_FIELDS)] for r in records))


def read_rejections(path) -> list[RejectionRecord]:
    out = []
    with open(path, newline="", encoding="ascii") as fh:
        for row in csv.DictReader(fh):
            out.append(RejectionRecord(row["algorithm"], *(int(row[k]) for k in REJECTION_FIELDS[1:]), -1))
    return out


def write_scaling(path, rows: Iterable[ScalingRow]) -> None:
    _write_csv(path, SCALING_FIELDS, ((*r[:-1], f"{r.wall_ms:.3f}") for r in rows))


def write_trace(path, traces) -> None:
    """Per-point records of one or more passes, one row per (iteration, point)."""
    def rows():
        for it, tr in enumerate(traces):
            for i in range(tr.n_points):
                yield (it, i, int(tr.epoch[i]), int(tr.processor[i]), int(tr.proposed[i]),
                       int(tr.rank[i]), int(tr.accepted[i]))
    _write_csv(path, TRACE_FIELDS, rows())
