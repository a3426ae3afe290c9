"""DP-means: serial reference, OCC validation and the epoch-parallel driver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .engine import BlockAnalysis, EpochPlan, ProposalBatch, RunTrace, partition_epochs, run_bsp


@dataclass
class DpState:
    centers: np.ndarray
    assignments: np.ndarray
    lam: float
    n_iters: int = 0
    converged: bool = False
    objectives: list[float] = field(default_factory=list)

    @property
    def n_centers(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class DpProposal:
    origin_index: int
    location: np.ndarray


def _as_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.ascontiguousarray(X)


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


class _Centers:
    """Append-only center buffer; ``view()`` is the accepted set in acceptance order.

    A transposed copy is kept alongside for the center-major distance kernel.
    """

    def __init__(self, dim: int, initial=None):
        initial = np.empty((0, dim)) if initial is None else np.asarray(initial, dtype=np.float64)
        cap = max(16, 2 * len(initial))
        self._buf = np.empty((cap, dim))
        self._t = np.empty((dim, cap))
        self.k = 0
        self.extend(initial)

    def _reserve(self, extra):
        if self.k + extra > len(self._buf):
            cap = max(2 * len(self._buf), self.k + extra)
            buf = np.empty((cap, self._buf.shape[1]))
            buf[:self.k] = self._buf[:self.k]
            t = np.empty((self._buf.shape[1], cap))
            t[:, :self.k] = self._t[:, :self.k]
            self._buf, self._t = buf, t

    def append(self, row):
        return self.extend(np.asarray(row, dtype=np.float64).reshape(1, -1))

    def extend(self, rows):
        """Append rows in order; returns the index of the first one."""
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self._buf.shape[1])
        self._reserve(len(rows))
        first = self.k
        self._buf[first:first + len(rows)] = rows
        self._t[:, first:first + len(rows)] = rows.T
        self.k += len(rows)
        return first

    def view(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        return self._buf[start:self.k if stop is None else stop]

    def nearest(self, X):
        return K.nearest_t(X, self._t, self.k)


def assign_point(x, centers, lam: float) -> int | None:
    """Index of the nearest center, or ``None`` when ``x`` is farther than ``lam`` from all of them."""
    _check_lambda(lam)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    C = np.asarray(centers, dtype=np.float64).reshape(-1, x.shape[1])
    best, arg = K.nearest(x, C)
    if best[0] > lam * lam:
        return None
    return int(arg[0])


def dp_validate(proposals: Sequence[DpProposal], lam: float, accepted=None):
    """Serially validate proposed centers.

    A proposal is rejected when some center accepted earlier in this call (or
    supplied in ``accepted``) lies within ``lam``; its reference then points
    at the nearest such center. Returns ``(centers, refs, accepted_mask)``
    with ``centers`` the full accepted set.
    """
    _check_lambda(lam)
    rows = [np.atleast_1d(np.asarray(p.location, dtype=np.float64)) for p in proposals]
    if accepted is not None:
        C0 = np.asarray(accepted, dtype=np.float64)
        C0 = C0.reshape(len(C0), -1)
    else:
        C0 = np.empty((0, len(rows[0]) if rows else 0))
    dim = len(rows[0]) if rows else C0.shape[1]
    P = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return K.dp_validate(P, np.ascontiguousarray(C0), lam * lam)


def recompute_centers(data, assignments):
    """Means of the assigned points, one per non-empty cluster.

    Empty clusters are dropped and the labels compacted, keeping the
    relative order of the surviving centers. Returns ``(centers, labels)``.
    """
    X = _as_data(data)
    z = np.asarray(assignments, dtype=np.int64)
    if len(z) == 0:
        return np.empty((0, X.shape[1])), z.copy()
    used, labels = np.unique(z, return_inverse=True)
    if used[0] < 0:
        raise ValueError("every point must be assigned before recomputing centers")
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=len(used))
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    sums = np.add.reduceat(X[order], starts, axis=0)
    return sums / counts[:, None], labels.astype(np.int64)


def dp_objective(data, centers, lam: float) -> float:
    """Sum of squared distances to the nearest center plus ``lam**2`` per center."""
    X = _as_data(data)
    C = np.asarray(centers, dtype=np.float64)
    n_centers = len(C)
    penalty = lam * lam * n_centers
    if len(X) == 0:
        return float(penalty)
    if n_centers == 0:
        return float("inf")
    best, _ = K.nearest(X, np.ascontiguousarray(C.reshape(n_centers, X.shape[1])))
    return float(best.sum() + penalty)


def _serial_sweep(X, cs: _Centers, z, lam2, order):
    for i in order:
        best, arg = cs.nearest(X[i:i + 1])
        if best[0] > lam2:
            z[i] = cs.append(X[i])
        else:
            z[i] = arg[0]


def _iterate(X, lam, max_iters, sweep, on_iteration=None):
    """Outer loop shared by the serial and parallel drivers.

    ``sweep(iteration, centers, z)`` performs one assignment pass and returns
    the raw labels, which may reference centers created during the pass.
    ``on_iteration(iteration, raw_labels)`` sees them before compaction.
    """
    C = np.empty((0, X.shape[1]))
    z = np.full(len(X), -1, dtype=np.int64)
    state = DpState(C, z, lam)
    prev = None
    for it in range(max_iters):
        z_raw = sweep(it, C, z.copy())
        if on_iteration is not None:
            on_iteration(it, z_raw.copy())
        C, z = recompute_centers(X, z_raw)
        state.objectives.append(dp_objective(X, C, lam))
        state.n_iters = it + 1
        if prev is not None and np.array_equal(prev, z):
            state.converged = True
            break
        prev = z
    state.centers, state.assignments = C, z
    return state


def serial_dpmeans(data, lam: float, max_iters: int = 100, orders=None, *,
                   on_iteration=None) -> DpState:
    """Serial DP-means.

    ``orders`` optionally gives the visiting order for each iteration (a
    sequence of permutations); iterations beyond it use index order.
    """
    _check_lambda(lam)
    X = _as_data(data)
    lam2 = lam * lam

    def sweep(it, C, z):
        cs = _Centers(X.shape[1], C)
        order = orders[it] if orders is not None and it < len(orders) else range(len(X))
        _serial_sweep(X, cs, z, lam2, order)
        return z

    if len(X) == 0:
        return DpState(np.empty((0, X.shape[1])), np.empty(0, dtype=np.int64), lam, converged=True)
    return _iterate(X, lam, max_iters, sweep, on_iteration)


class DpMeansPass:
    """One DP-means assignment pass as an OCC algorithm for :func:`run_bsp`."""

    def __init__(self, data, centers, assignments, lam: float, skip_validation: bool = False):
        self.X = _as_data(data)
        self.n_points = len(self.X)
        self.lam = lam
        self.lam2 = lam * lam
        self.centers = _Centers(self.X.shape[1], centers)
        self.z = np.array(assignments, dtype=np.int64)
        self.skip_validation = skip_validation

    def analyze(self, block):
        idx = block.indices
        best, arg = self.centers.nearest(self.X[idx])
        proposed = best > self.lam2
        props = ProposalBatch(idx[proposed], location=self.X[idx[proposed]])
        return BlockAnalysis(block, idx, proposed, props, arg)

    def commit(self, a):
        keep = ~a.proposed
        self.z[a.indices[keep]] = a.local[keep]

    def validate(self, proposals: ProposalBatch):
        k0 = self.centers.k
        P = proposals["location"] if len(proposals) else np.empty((0, self.X.shape[1]))
        if self.skip_validation:
            new, refs, ok = P, np.arange(len(P)), np.ones(len(P), dtype=bool)
        else:
            new, refs, ok = K.dp_validate(np.ascontiguousarray(P), np.empty((0, P.shape[1])), self.lam2)
        self.centers.extend(new)
        self.z[proposals.origins] = k0 + refs
        return ok

    def labels(self, indices):
        return self.z[indices].tolist()


def bootstrap_size(plan: EpochPlan) -> int:
    return min(plan.n_points, (plan.n_processors * plan.block_size) // 16)


def parallel_dpmeans(data, lam: float, plan: EpochPlan, max_iters: int = 100, *,
                     bootstrap: bool = False, workers: int = 1, skip_validation: bool = False,
                     record_assignments: bool = True,
                     on_iteration=None) -> tuple[DpState, list[RunTrace]]:
    """OCC DP-means: every iteration runs the epoch plan, then recomputes means.

    With ``bootstrap`` the first ``Pb // 16`` points of the first iteration
    are processed serially before the epochs start. ``skip_validation``
    accepts every proposal unchecked; it exists only as a negative control
    for the serializability checker.
    """
    _check_lambda(lam)
    X = _as_data(data)
    if plan.n_points != len(X):
        raise ValueError(f"plan covers {plan.n_points} points but the data has {len(X)}")
    first_plan = plan
    if bootstrap:
        first_plan = partition_epochs(plan.n_points, plan.n_processors, plan.block_size,
                                      serial_prefix=bootstrap_size(plan))
    traces: list[RunTrace] = []

    def sweep(it, C, z):
        algo = DpMeansPass(X, C, z, lam, skip_validation)
        traces.append(run_bsp(algo, first_plan if it == 0 else plan, workers=workers,
                              record_assignments=record_assignments))
        return algo.z

    if len(X) == 0:
        return DpState(np.empty((0, X.shape[1])), np.empty(0, dtype=np.int64), lam, converged=True), []
    return _iterate(X, lam, max_iters, sweep, on_iteration), traces
