"""Online facility location: serial single pass and the OCC epoch-parallel version.

Both versions read the same uniform ``u_i`` for point ``i`` (slot 0 of the
stream). A worker sends ``x_i`` to the master iff ``u_i < min(1, d^2/lam^2)``
against the previous epoch's facilities, and the master opens it iff
``u_i < min(1, d*^2/lam^2)`` against everything accepted so far. Since
``d* <= d`` this accepts with conditional probability
``min(d*^2, lam^2) / min(d^2, lam^2)``, and it makes the parallel run equal to
the serial run on the equivalent order path by path, not only in law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .dpmeans import _Centers, _as_data, _check_lambda, dp_objective
from .engine import BlockAnalysis, EpochPlan, ProposalBatch, RunTrace, run_bsp

ofl_objective = dp_objective

SEND_SLOT = 0
MASTER_SLOT = 1


@dataclass(frozen=True)
class OflProposal:
    origin_index: int
    location: np.ndarray
    sq_distance: float
    nearest: int = -1

    @property
    def distance(self) -> float:
        return math.sqrt(self.sq_distance)


@dataclass
class OflResult:
    centers: np.ndarray
    origins: np.ndarray
    assignments: np.ndarray

    @property
    def n_centers(self) -> int:
        return len(self.centers)


def open_probability(sq_distance, lam: float):
    """``min(d^2, lam^2) / lam^2``; an infinite distance gives 1."""
    lam2 = lam * lam
    return np.minimum(sq_distance, lam2) / lam2


def ofl_propose(x, centers, lam: float, u: float, index: int = -1) -> OflProposal | None:
    _check_lambda(lam)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    C = np.asarray(centers, dtype=np.float64).reshape(-1, x.shape[1])
    best, arg = K.nearest(x, C)
    if u < open_probability(best[0], lam):
        return OflProposal(index, x[0], float(best[0]), int(arg[0]))
    return None


def ofl_validate(proposals: Sequence[OflProposal], global_centers, lam: float, stream,
                 epoch_accepted=None, two_draw: bool = False):
    """Serial master pass over one epoch's proposals.

    ``d*`` is the distance to ``global_centers`` and everything accepted so
    far in the epoch; the global part is the distance carried by the
    proposal. Returns ``(new_centers, accepted_mask, labels)`` where labels
    index ``global_centers + new_centers`` (``epoch_accepted`` rows count as
    new centers placed before the first proposal).

    In ``two_draw`` mode the master uses an independent draw (slot 1) and
    accepts with probability ``min(d*^2, lam^2) / min(d^2, lam^2)``.
    """
    _check_lambda(lam)
    G = np.asarray(global_centers, dtype=np.float64)
    n_global = len(G)
    if proposals:
        dim = len(np.atleast_1d(proposals[0].location))
    elif n_global:
        dim = G.reshape(n_global, -1).shape[1]
    else:
        dim = 0 if epoch_accepted is None else np.asarray(epoch_accepted).shape[-1]
    C0 = np.empty((0, dim)) if epoch_accepted is None else \
        np.ascontiguousarray(np.asarray(epoch_accepted, dtype=np.float64).reshape(-1, dim))
    batch = ProposalBatch(
        [p.origin_index for p in proposals],
        location=np.array([np.atleast_1d(p.location) for p in proposals], dtype=np.float64).reshape(-1, dim),
        sq_distance=np.array([p.sq_distance for p in proposals], dtype=np.float64),
        nearest=np.array([p.nearest for p in proposals], dtype=np.int64),
    )
    return _validate_batch(batch, C0, n_global, lam * lam, stream, two_draw)


def _validate_batch(batch: ProposalBatch, C0, n_global, lam2, stream, two_draw):
    u = stream.uniform(batch.origins, MASTER_SLOT if two_draw else SEND_SLOT)
    return K.ofl_validate(np.ascontiguousarray(batch["location"]), batch["sq_distance"],
                          batch["nearest"], u, C0, n_global, lam2, two_draw)


def serial_ofl(data, lam: float, stream, order=None) -> OflResult:
    """Single pass of online facility location.

    Point ``i`` opens a facility iff ``u_i < min(1, d^2/lam^2)`` where ``d``
    is its distance to the facilities open when it arrives.
    """
    _check_lambda(lam)
    X = _as_data(data)
    order = np.arange(len(X)) if order is None else np.asarray(order)
    u = stream.uniform(np.arange(len(X)), SEND_SLOT)
    cs = _Centers(X.shape[1])
    origins = []
    z = np.full(len(X), -1, dtype=np.int64)
    lam2 = lam * lam
    for i in order:
        best, arg = cs.nearest(X[i:i + 1])
        if u[i] < min(best[0], lam2) / lam2:
            z[i] = cs.append(X[i])
            origins.append(int(i))
        else:
            z[i] = arg[0]
    return OflResult(cs.view().copy(), np.array(origins, dtype=np.int64), z)


class OflPass:
    """The OCC OFL pass as an algorithm for :func:`run_bsp`."""

    def __init__(self, data, lam: float, stream, two_draw: bool = False,
                 skip_validation: bool = False):
        _check_lambda(lam)
        self.X = _as_data(data)
        self.n_points = len(self.X)
        self.lam = lam
        self.stream = stream
        self.two_draw = two_draw
        self.skip_validation = skip_validation
        self.centers = _Centers(self.X.shape[1])
        self.origins: list[int] = []
        self.z = np.full(self.n_points, -1, dtype=np.int64)

    def analyze(self, block):
        idx = block.indices
        best, arg = self.centers.nearest(self.X[idx])
        u = self.stream.uniform(idx, SEND_SLOT)
        sent = u < open_probability(best, self.lam)
        props = ProposalBatch(idx[sent], location=self.X[idx[sent]], sq_distance=best[sent],
                              nearest=arg[sent])
        return BlockAnalysis(block, idx, sent, props, arg)

    def commit(self, a):
        keep = ~a.proposed
        self.z[a.indices[keep]] = a.local[keep]

    def validate(self, proposals: ProposalBatch):
        n = len(proposals)
        n_global = self.centers.k
        if n == 0:
            return np.zeros(0, dtype=bool)
        if self.skip_validation:
            new, ok, labels = proposals["location"], np.ones(n, dtype=bool), n_global + np.arange(n)
        else:
            new, ok, labels = _validate_batch(proposals, np.empty((0, self.X.shape[1])), n_global,
                                              self.lam * self.lam, self.stream, self.two_draw)
        self.centers.extend(new)
        self.z[proposals.origins] = labels
        self.origins.extend(proposals.origins[ok].tolist())
        return ok

    def labels(self, indices):
        return self.z[indices].tolist()

    def result(self) -> OflResult:
        return OflResult(self.centers.view().copy(), np.array(self.origins, dtype=np.int64), self.z.copy())


def parallel_ofl(data, lam: float, plan: EpochPlan, stream, *, workers: int = 1,
                 two_draw: bool = False, skip_validation: bool = False,
                 record_assignments: bool = True) -> tuple[OflResult, RunTrace]:
    algo = OflPass(data, lam, stream, two_draw, skip_validation)
    trace = run_bsp(algo, plan, workers=workers, record_assignments=record_assignments)
    return algo.result(), trace
