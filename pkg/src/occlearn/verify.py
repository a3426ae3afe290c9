"""Serializability oracle.

Runs the epoch-parallel algorithm, rebuilds the equivalent serial order of
every pass from its trace, reruns the serial algorithm on those orders and
compares the stored outputs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .bpmeans import parallel_bpmeans, serial_bpmeans
from .dpmeans import _as_data, parallel_dpmeans, serial_dpmeans
from .engine import equivalent_serial_order, partition_epochs
from .ofl import parallel_ofl, serial_ofl
from .stream import UniformStream


@dataclass
class Divergence:
    """First place where the parallel and serial runs disagree."""
    what: str
    iteration: int | None = None
    position: int | None = None
    index: int | None = None
    parallel: Any = None
    serial: Any = None

    def describe(self) -> str:
        parts = [self.what]
        if self.iteration is not None:
            parts.append(f"iteration {self.iteration}")
        if self.position is not None:
            parts.append(f"serial position {self.position}")
        if self.index is not None:
            parts.append(f"point {self.index}")
        return f"{', '.join(parts)}: parallel={self.parallel!r} serial={self.serial!r}"


@dataclass
class VerifyReport:
    algorithm: str
    n_points: int
    n_processors: int
    block_size: int
    n_iters: int
    passed: bool
    divergence: Divergence | None = None
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        head = (f"{'PASS' if self.passed else 'FAIL'} {self.algorithm} N={self.n_points} "
                f"P={self.n_processors} b={self.block_size} iterations={self.n_iters}")
        extra = " ".join(f"{k}={v}" for k, v in self.details.items())
        out = f"{head} {extra}".rstrip()
        if self.divergence is not None:
            out += "\n  first divergence: " + self.divergence.describe()
        return out


def _first_row_mismatch(a, b) -> int | None:
    if a.shape != b.shape:
        return min(len(a), len(b))
    rows = a.reshape(len(a), -1).view(np.uint8) != b.reshape(len(b), -1).view(np.uint8)
    bad = np.flatnonzero(rows.any(axis=1))
    return int(bad[0]) if len(bad) else None


def _as_label(v):
    return np.flatnonzero(v).tolist() if np.ndim(v) else int(v)


def _label_divergence(it, order, par, ser) -> Divergence | None:
    """First point, in serial visiting order, whose raw label differs."""
    for pos, i in enumerate(order):
        a, b = _as_label(par[i]), _as_label(ser[i])
        if a != b:
            return Divergence("assignment", it, pos, int(i), a, b)
    return None


def _compare_iterative(name, par_state, ser_state, par_hist, ser_hist, orders, attr):
    for it in range(min(len(par_hist), len(ser_hist))):
        a, b = par_hist[it], ser_hist[it]
        if a.shape == b.shape and np.array_equal(a, b):
            continue
        div = _label_divergence(it, orders[it], a, b)
        if div is None:
            div = Divergence(f"{name} count", it, parallel=a.shape, serial=b.shape)
        return div
    if par_state.n_iters != ser_state.n_iters:
        return Divergence("iteration count", parallel=par_state.n_iters, serial=ser_state.n_iters)
    A, B = getattr(par_state, attr), getattr(ser_state, attr)
    row = _first_row_mismatch(np.ascontiguousarray(A), np.ascontiguousarray(B))
    if row is not None:
        return Divergence(name, index=row,
                          parallel=A[row].tolist() if row < len(A) else None,
                          serial=B[row].tolist() if row < len(B) else None)
    if not np.array_equal(par_state.assignments, ser_state.assignments):
        bad = int(np.flatnonzero(np.any(
            np.asarray(par_state.assignments).reshape(par_state.assignments.shape[0], -1)
            != np.asarray(ser_state.assignments).reshape(ser_state.assignments.shape[0], -1), axis=1))[0])
        return Divergence("final assignment", index=bad, parallel=par_state.assignments[bad].tolist(),
                          serial=ser_state.assignments[bad].tolist())
    return None


def verify_serializability(algorithm: str, data, lam: float, n_processors: int, block_size: int,
                           seed: int = 0, *, max_iters: int = 100, bootstrap: bool = False,
                           skip_validation: bool = False, workers: int = 1) -> VerifyReport:
    """Check that the OCC run equals the serial run on its equivalent order.

    ``skip_validation`` makes the master accept every proposal unchecked; the
    result is generally not serializable, which is how the oracle itself is
    tested. For OFL the serial run reads the same uniform stream.
    """
    X = _as_data(data)
    plan = partition_epochs(len(X), n_processors, block_size)
    report = VerifyReport(algorithm, len(X), n_processors, block_size, 0, False)

    if algorithm == "ofl":
        stream = UniformStream(seed)
        res, trace = parallel_ofl(X, lam, plan, stream, workers=workers,
                                  skip_validation=skip_validation, record_assignments=False)
        order = equivalent_serial_order(trace)
        ser = serial_ofl(X, lam, stream, order=order)
        report.n_iters = 1
        report.details = {"centers": res.n_centers, "rejected": trace.n_rejected}
        div = None
        row = _first_row_mismatch(res.centers, ser.centers)
        if row is not None:
            div = Divergence("center", 0, index=row,
                             parallel=int(res.origins[row]) if row < len(res.origins) else None,
                             serial=int(ser.origins[row]) if row < len(ser.origins) else None)
            # Point at the first transaction whose outcome differs, which explains the center.
            div = _label_divergence(0, order, res.assignments, ser.assignments) or div
        elif not np.array_equal(res.assignments, ser.assignments):
            div = _label_divergence(0, order, res.assignments, ser.assignments)
        elif not np.array_equal(res.origins, ser.origins):
            div = Divergence("center origins", 0, parallel=res.origins.tolist(), serial=ser.origins.tolist())
        report.divergence = div
        report.passed = div is None
        return report

    if algorithm == "dpmeans":
        par_fn, ser_fn, attr = parallel_dpmeans, serial_dpmeans, "centers"
    elif algorithm == "bpmeans":
        par_fn, ser_fn, attr = parallel_bpmeans, serial_bpmeans, "features"
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    par_hist: list[np.ndarray] = []
    ser_hist: list[np.ndarray] = []
    state, traces = par_fn(X, lam, plan, max_iters, bootstrap=bootstrap, workers=workers,
                           skip_validation=skip_validation, record_assignments=False,
                           on_iteration=lambda it, z: par_hist.append(z))
    orders = [equivalent_serial_order(t) for t in traces]
    ser = ser_fn(X, lam, max_iters, orders, on_iteration=lambda it, z: ser_hist.append(z))
    report.n_iters = state.n_iters
    report.details = {attr: len(getattr(state, attr)),
                      "rejected": sum(t.n_rejected for t in traces)}
    report.divergence = _compare_iterative(attr[:-1], state, ser, par_hist, ser_hist, orders, attr)
    report.passed = report.divergence is None
    return report
