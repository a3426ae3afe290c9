"""Rejection-rate, master-load and scaling experiments on synthetic data."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np
from scipy import stats

from .bpmeans import BpMeansPass, _initial_model, parallel_bpmeans
from .datagen import GenConfig, gen_bp_features, gen_dp_mixture, gen_separable_clusters
from .dpmeans import DpMeansPass, parallel_dpmeans
from .engine import RunTrace, partition_epochs, run_bsp
from .ofl import OflPass, parallel_ofl
from .stream import UniformStream

ALGORITHMS = ("dpmeans", "ofl", "bpmeans")
DATA_MODES = ("mixture", "separable", "bp")
DEFAULT_DATA_MODE = {"dpmeans": "mixture", "ofl": "mixture", "bpmeans": "bp"}


@dataclass
class ExperimentGrid:
    n_values: tuple[int, ...] = tuple(range(256, 2561, 256))
    pb_values: tuple[int, ...] = (16, 32, 64, 128, 256)
    trials: int = 400
    algorithm: str = "dpmeans"
    data_mode: str | None = None
    lam: float = 1.0
    dim: int = 16
    theta: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; pick one of {ALGORITHMS}")
        if self.data_mode is None:
            self.data_mode = DEFAULT_DATA_MODE[self.algorithm]
        if self.data_mode not in DATA_MODES:
            raise ValueError(f"unknown data mode {self.data_mode!r}; pick one of {DATA_MODES}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(n < 1 for n in self.n_values) or any(pb < 1 for pb in self.pb_values):
            raise ValueError("grid values must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


class Dataset(NamedTuple):
    points: np.ndarray
    n_latent: int


def make_dataset(mode: str, n: int, seed: int, dim: int = 16, theta: float = 1.0) -> Dataset:
    """Generate data and count the latent clusters or features actually present."""
    cfg = GenConfig(n, dim=dim, theta=theta, seed=seed)
    if mode == "mixture":
        d = gen_dp_mixture(cfg)
        return Dataset(d.points, len(np.unique(d.labels)))
    if mode == "separable":
        d = gen_separable_clusters(cfg)
        return Dataset(d.points, len(np.unique(d.labels)))
    if mode == "bp":
        d = gen_bp_features(cfg)
        return Dataset(d.points, int(d.Z.any(axis=0).sum()))
    raise ValueError(f"unknown data mode {mode!r}")


def trial_seed(base_seed: int, algorithm: str, n: int, pb: int, trial: int) -> int:
    """Independent 63-bit seed for one experiment cell and trial."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(ALGORITHMS.index(algorithm), n, pb, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def first_iteration(algorithm: str, X: np.ndarray, lam: float, plan, seed: int = 0) -> RunTrace:
    """One pass over the data from the algorithm's initial state."""
    if algorithm == "dpmeans":
        algo = DpMeansPass(X, np.empty((0, X.shape[1])), np.full(len(X), -1), lam)
    elif algorithm == "ofl":
        algo = OflPass(X, lam, UniformStream(seed))
    elif algorithm == "bpmeans":
        algo = BpMeansPass(X, *_initial_model(X), lam)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return run_bsp(algo, plan, record_assignments=False)


class RejectionRecord(NamedTuple):
    algorithm: str
    n: int
    pb: int
    trial: int
    proposed: int
    accepted: int
    rejected: int
    latent: int


def run_rejection_experiment(grid: ExperimentGrid, seed: int = 0,
                             progress: Callable[[str], None] | None = None) -> list[RejectionRecord]:
    """First-iteration proposals and acceptances for every cell and trial of ``grid``.

    A single worker with block size ``Pb`` gives the same epochs, hence the
    same counts, as ``P`` workers with block size ``Pb / P``.
    """
    out = []
    for pb in grid.pb_values:
        for n in grid.n_values:
            plan = partition_epochs(n, 1, pb)
            for trial in range(grid.trials):
                s = trial_seed(seed, grid.algorithm, n, pb, trial)
                data = make_dataset(grid.data_mode, n, s, grid.dim, grid.theta)
                tr = first_iteration(grid.algorithm, data.points, grid.lam, plan, s)
                out.append(RejectionRecord(grid.algorithm, n, pb, trial, tr.n_proposed,
                                           tr.n_accepted, tr.n_rejected, data.n_latent))
            if progress is not None:
                progress(f"{grid.algorithm} Pb={pb} N={n} done")
    return out


@dataclass
class CellSummary:
    algorithm: str
    n: int
    pb: int
    trials: int
    mean_proposed: float
    mean_accepted: float
    mean_rejected: float
    se_rejected: float
    mean_latent: float

    @property
    def within_pb(self) -> bool:
        """Mean rejections at most ``Pb``."""
        return self.mean_rejected <= self.pb

    def master_bound_holds(self, n_se: float = 3.0) -> bool:
        """Mean proposals at most ``Pb`` + mean accepted, with ``n_se`` standard errors of slack.

        The standard error is that of the per-trial difference, i.e. of the rejections.
        """
        return self.mean_proposed <= self.pb + self.mean_accepted + n_se * self.se_rejected


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def summarize(records: Iterable[RejectionRecord]) -> list[CellSummary]:
    groups: dict[tuple, list[RejectionRecord]] = {}
    for r in records:
        groups.setdefault((r.algorithm, r.pb, r.n), []).append(r)
    out = []
    for (alg, pb, n), rs in sorted(groups.items()):
        arr = np.array([(r.proposed, r.accepted, r.rejected, r.latent) for r in rs], dtype=float)
        out.append(CellSummary(alg, n, pb, len(rs), *arr[:, :3].mean(axis=0),
                               _se(arr[:, 2]), arr[:, 3].mean()))
    return out


@dataclass
class SlopeFit:
    pb: int
    slope: float
    low: float
    high: float
    n_obs: int

    @property
    def contains_zero(self) -> bool:
        return self.low <= 0.0 <= self.high


def rejection_slope(records: Iterable[RejectionRecord], pb: int, level: float = 0.95) -> SlopeFit:
    """OLS slope of mean rejections on ``N`` for one ``Pb``, with a t-based interval.

    Each ``N`` contributes one point, the mean over its trials.
    """
    cells = [c for c in summarize(records) if c.pb == pb]
    n = np.array([c.n for c in cells], dtype=float)
    y = np.array([c.mean_rejected for c in cells])
    if len(cells) < 3:
        raise ValueError("need at least three values of N")
    if np.ptp(y) == 0:
        return SlopeFit(pb, 0.0, 0.0, 0.0, len(cells))
    fit = stats.linregress(n, y)
    half = stats.t.ppf(0.5 + level / 2, len(cells) - 2) * fit.stderr
    return SlopeFit(pb, float(fit.slope), float(fit.slope - half), float(fit.slope + half), len(cells))


class ScalingRow(NamedTuple):
    p: int
    b: int
    iteration: int
    epoch: int
    master_points: int
    worker_points_max: int
    wall_ms: float


@dataclass
class ScalingResult:
    rows: list[ScalingRow] = field(default_factory=list)
    worker_totals: dict[int, list[tuple[int, ...]]] = field(default_factory=dict)
    wall_s: dict[int, float] = field(default_factory=dict)

    def master_counts(self, p: int) -> list[tuple[int, int, int]]:
        return [(r.iteration, r.epoch, r.master_points) for r in self.rows if r.p == p]


def run_scaling(algorithm: str, X: np.ndarray, lam: float, pb: int,
                processors: Iterable[int] = (1, 2, 4, 8), iters: int = 5, seed: int = 0,
                bootstrap: bool = False) -> ScalingResult:
    """Run the full algorithm for each ``P`` with ``b = Pb / P``.

    Records per epoch how many points the master validated and the largest
    per-worker load, and per iteration the points each worker analyzed.
    """
    res = ScalingResult()
    for p in processors:
        if pb % p:
            raise ValueError(f"Pb={pb} is not divisible by P={p}")
        plan = partition_epochs(len(X), p, pb // p)
        tic = time.perf_counter()
        if algorithm == "dpmeans":
            _, traces = parallel_dpmeans(X, lam, plan, iters, bootstrap=bootstrap, record_assignments=False)
        elif algorithm == "bpmeans":
            _, traces = parallel_bpmeans(X, lam, plan, iters, bootstrap=bootstrap, record_assignments=False)
        elif algorithm == "ofl":
            _, tr = parallel_ofl(X, lam, plan, UniformStream(seed), record_assignments=False)
            traces = [tr]
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        res.wall_s[p] = time.perf_counter() - tic
        totals = []
        for it, tr in enumerate(traces):
            per_worker = np.zeros(p, dtype=np.int64)
            for rec, ms in zip(tr.epochs, tr.wall_ms):
                per_worker += rec.worker_point_counts
                res.rows.append(ScalingRow(p, pb // p, it, rec.epoch, rec.proposals_sent,
                                           max(rec.worker_point_counts), ms))
            totals.append(tuple(int(c) for c in per_worker))
        res.worker_totals[p] = totals
    return res
