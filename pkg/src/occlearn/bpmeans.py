"""BP-means latent feature learning, serial and OCC epoch-parallel."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .dpmeans import _as_data, _check_lambda, _Centers, bootstrap_size
from .engine import BlockAnalysis, EpochPlan, ProposalBatch, RunTrace, partition_epochs, run_bsp

# Row chunk for the Z^T Z / Z^T X accumulation. Fixed, so the sums do not
# depend on how many workers there are.
GRAM_CHUNK = 4096


@dataclass
class FeatureModel:
    features: np.ndarray
    assignments: np.ndarray
    lam: float
    n_iters: int = 0
    converged: bool = False
    objectives: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class BpProposal:
    origin_index: int
    direction: np.ndarray


def _binary(z, k):
    return np.ascontiguousarray(np.asarray(z, dtype=np.uint8).reshape(1, k))


def optimize_assignment(x, features, z_init) -> np.ndarray:
    """One coordinate-descent pass over the binary weights, in feature order."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    F = np.ascontiguousarray(np.asarray(features, dtype=np.float64).reshape(-1, x.shape[1]))
    z = _binary(z_init, len(F)).copy()
    R = K.residuals(x, z, F)
    K.coordinate_pass(R, z, F, K.sq_norms(F), 0, len(F))
    return z[0]


def bp_analyze(x, features, lam: float, z_init):
    """Optimize the weights of ``x``; propose the residual as a feature if it is longer than ``lam``."""
    _check_lambda(lam)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    F = np.ascontiguousarray(np.asarray(features, dtype=np.float64).reshape(-1, x.shape[1]))
    z = _binary(z_init, len(F)).copy()
    R = K.residuals(x, z, F)
    K.coordinate_pass(R, z, F, K.sq_norms(F), 0, len(F))
    if K.sq_norms(R)[0] > lam * lam:
        return z[0], BpProposal(-1, R[0].copy())
    return z[0], None


class _Features(_Centers):
    """Feature buffer that also caches squared norms."""

    def __init__(self, dim, initial=None):
        self._sq = np.empty(0)
        super().__init__(dim, initial)

    def extend(self, rows):
        first = super().extend(rows)
        if len(self._sq) < len(self._buf):
            grown = np.empty(len(self._buf))
            grown[:first] = self._sq[:first]
            self._sq = grown
        self._sq[first:self.k] = K.sq_norms(self._buf[first:self.k])
        return first

    def sq(self, start=0, stop=None):
        return self._sq[start:self.k if stop is None else stop]


def bp_validate(proposals: Sequence[BpProposal], lam: float):
    """Serially validate proposed features against the ones accepted in this call.

    Each proposal is first expressed with the features accepted before it;
    what remains is accepted as a new feature iff its squared norm exceeds
    ``lam**2``. Returns ``(features, patches, accepted_mask)``; row ``n`` of
    ``patches`` holds proposal ``n``'s weights over the returned features.
    """
    _check_lambda(lam)
    if not proposals:
        return np.empty((0, 0)), np.zeros((0, 0), dtype=np.uint8), np.zeros(0, dtype=bool)
    P = np.array([np.atleast_1d(p.direction) for p in proposals], dtype=np.float64)
    return K.bp_validate(P.reshape(len(proposals), -1), lam * lam)


def update_feature_means(data, Z) -> np.ndarray:
    """Least-squares feature means ``(Z^T Z)^+ Z^T X``.

    The two sums are accumulated chunk by chunk (each chunk could come from a
    different worker); a singular ``Z^T Z`` gets the minimum-norm solution.
    """
    X = _as_data(data)
    Z = np.asarray(Z, dtype=np.float64).reshape(len(X), -1)
    k = Z.shape[1]
    if k == 0:
        return np.empty((0, X.shape[1]))
    gram = np.zeros((k, k))
    cross = np.zeros((k, X.shape[1]))
    for s in range(0, len(X), GRAM_CHUNK):
        zc = Z[s:s + GRAM_CHUNK]
        gram += zc.T @ zc
        cross += zc.T @ X[s:s + GRAM_CHUNK]
    return np.ascontiguousarray(np.linalg.lstsq(gram, cross, rcond=None)[0])


def bp_objective(data, model_or_features, Z=None, lam: float | None = None) -> float:
    """``sum_i |x_i - z_i F|^2 + lam^2 K``."""
    if isinstance(model_or_features, FeatureModel):
        F, Z, lam = model_or_features.features, model_or_features.assignments, model_or_features.lam
    else:
        F = model_or_features
    X = _as_data(data)
    F = np.asarray(F, dtype=np.float64).reshape(-1, X.shape[1])
    Z = np.asarray(Z, dtype=np.float64).reshape(len(X), len(F))
    resid = X - Z @ F
    return float((resid * resid).sum() + lam * lam * len(F))


class _Assignments:
    """Growable N x K binary matrix."""

    def __init__(self, Z):
        Z = np.asarray(Z, dtype=np.uint8)
        self.n, self.k = Z.shape
        self._buf = np.zeros((self.n, max(16, 2 * self.k)), dtype=np.uint8)
        self._buf[:, :self.k] = Z

    def add_columns(self, count=1):
        """Append ``count`` zero columns; returns the index of the first."""
        if self.k + count > self._buf.shape[1]:
            grown = np.zeros((self.n, max(2 * self._buf.shape[1], self.k + count)), dtype=np.uint8)
            grown[:, :self.k] = self._buf[:, :self.k]
            self._buf = grown
        self.k += count
        return self.k - count

    def rows(self, idx, stop=None):
        return self._buf[idx, :self.k if stop is None else stop]

    def set_rows(self, idx, values, start=0, stop=None):
        self._buf[idx, start:self.k if stop is None else stop] = values

    def matrix(self):
        return self._buf[:, :self.k].copy()


def _initial_model(X):
    return X.mean(axis=0, keepdims=True), np.ones((len(X), 1), dtype=np.uint8)


def _prune(Z, F):
    used = Z.any(axis=0)
    return np.ascontiguousarray(Z[:, used]), F[used]


def _iterate(X, lam, max_iters, sweep, on_iteration=None):
    F, Z = _initial_model(X)
    model = FeatureModel(F, Z, lam)
    for it in range(max_iters):
        Z_new, F_grown = sweep(it, F, Z)
        if on_iteration is not None:
            on_iteration(it, Z_new.copy())
        Z_new, _ = _prune(Z_new, F_grown)
        F = update_feature_means(X, Z_new)
        model.objectives.append(bp_objective(X, F, Z_new, lam))
        model.n_iters = it + 1
        done = Z_new.shape == Z.shape and np.array_equal(Z_new, Z)
        Z = Z_new
        if done:
            model.converged = True
            break
    model.features, model.assignments = F, Z
    return model


def serial_bpmeans(data, lam: float, max_iters: int = 100, orders=None, *,
                   on_iteration=None) -> FeatureModel:
    """Serial BP-means starting from a single feature at the data mean.

    Features created during a sweep are visible to every later point of the
    same sweep. ``orders`` optionally gives per-iteration visiting orders.
    """
    _check_lambda(lam)
    X = _as_data(data)
    if len(X) == 0:
        raise ValueError("BP-means needs at least one data point")
    lam2 = lam * lam

    def sweep(it, F, Z):
        fs = _Features(X.shape[1], F)
        za = _Assignments(Z)
        order = orders[it] if orders is not None and it < len(orders) else range(len(X))
        for i in order:
            k = fs.k
            z = za.rows(slice(i, i + 1)).copy()
            R = K.residuals(X[i:i + 1], z, fs.view())
            K.coordinate_pass(R, z, fs.view(), fs.sq(), 0, k)
            za.set_rows(i, z[0])
            if K.sq_norms(R)[0] > lam2:
                fs.append(R[0])
                za.set_rows(i, 1, za.add_columns())
        return za.matrix(), fs.view().copy()

    return _iterate(X, lam, max_iters, sweep, on_iteration)


class BpMeansPass:
    """One BP-means assignment pass as an OCC algorithm for :func:`run_bsp`."""

    def __init__(self, data, features, Z, lam: float, skip_validation: bool = False):
        self.X = _as_data(data)
        self.n_points = len(self.X)
        self.lam = lam
        self.lam2 = lam * lam
        self.features = _Features(self.X.shape[1], features)
        self.Z = _Assignments(Z)
        self.skip_validation = skip_validation

    def analyze(self, block):
        idx = block.indices
        k = self.features.k
        F = self.features.view()
        z = np.ascontiguousarray(self.Z.rows(idx, k))
        R = K.residuals(self.X[idx], z, F)
        K.coordinate_pass(R, z, F, self.features.sq(), 0, k)
        proposed = K.sq_norms(R) > self.lam2
        props = ProposalBatch(idx[proposed], direction=R[proposed])
        return BlockAnalysis(block, idx, proposed, props, (k, z))

    def commit(self, a):
        k, z = a.local
        self.Z.set_rows(a.indices, z, 0, k)

    def validate(self, proposals: ProposalBatch):
        n = len(proposals)
        if n == 0:
            return np.zeros(0, dtype=bool)
        P = np.ascontiguousarray(proposals["direction"])
        if self.skip_validation:
            new, patches, ok = P, np.eye(n, dtype=np.uint8), np.ones(n, dtype=bool)
        else:
            new, patches, ok = K.bp_validate(P, self.lam2)
        self.features.extend(new)
        k0 = self.Z.add_columns(len(new))
        self.Z.set_rows(proposals.origins, patches, k0)
        return ok

    def labels(self, indices):
        return [tuple(np.flatnonzero(row).tolist()) for row in self.Z.rows(indices)]


def parallel_bpmeans(data, lam: float, plan: EpochPlan, max_iters: int = 100, *,
                     bootstrap: bool = False, workers: int = 1, skip_validation: bool = False,
                     record_assignments: bool = True,
                     on_iteration=None) -> tuple[FeatureModel, list[RunTrace]]:
    """OCC BP-means: per iteration the epoch plan, then one least-squares feature update."""
    _check_lambda(lam)
    X = _as_data(data)
    if len(X) == 0:
        raise ValueError("BP-means needs at least one data point")
    if plan.n_points != len(X):
        raise ValueError(f"plan covers {plan.n_points} points but the data has {len(X)}")
    first_plan = plan
    if bootstrap:
        first_plan = partition_epochs(plan.n_points, plan.n_processors, plan.block_size,
                                      serial_prefix=bootstrap_size(plan))
    traces: list[RunTrace] = []

    def sweep(it, F, Z):
        algo = BpMeansPass(X, F, Z, lam, skip_validation)
        traces.append(run_bsp(algo, first_plan if it == 0 else plan, workers=workers,
                              record_assignments=record_assignments))
        return algo.Z.matrix(), algo.features.view().copy()

    return _iterate(X, lam, max_iters, sweep, on_iteration), traces
