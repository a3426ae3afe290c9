"""Bulk-synchronous OCC driver.

Each epoch every logical worker analyzes its block against the state left by
the previous epoch, proposals are gathered and validated one at a time in
ascending point index, and the accepted changes become visible to the next
epoch. The driver records enough per point to rebuild an equivalent serial
order afterwards.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, NamedTuple, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EngineError(RuntimeError):
    """An algorithm hook failed; the message names the epoch and points involved."""


@dataclass(frozen=True)
class Block:
    processor: int
    epoch: int
    start: int
    stop: int

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    def __len__(self):
        return self.stop - self.start


@dataclass(frozen=True)
class EpochPlan:
    n_points: int
    n_processors: int
    block_size: int
    blocks: tuple[Block, ...]
    serial_prefix: int = 0

    @property
    def n_epochs(self) -> int:
        return self.blocks[-1].epoch + 1 if self.blocks else 0

    def epochs(self) -> list[list[Block]]:
        out: list[list[Block]] = [[] for _ in range(self.n_epochs)]
        for blk in self.blocks:
            out[blk.epoch].append(blk)
        return out

    def block(self, processor: int, epoch: int) -> Block | None:
        for blk in self.blocks:
            if blk.processor == processor and blk.epoch == epoch:
                return blk
        return None


def partition_epochs(n_points: int, n_processors: int, block_size: int,
                     serial_prefix: int = 0) -> EpochPlan:
    """Cut ``0..n_points-1`` into consecutive blocks, dealt round-robin to processors.

    Block ``(p, t)`` (0-based) starts at ``(t * P + p) * b``. The last epoch
    may hold fewer blocks and its last block may be short.

    ``serial_prefix`` points are first placed in one-point epochs on
    processor 0; a one-point epoch is a plain serial step, which is how
    bootstrapping is expressed.
    """
    if n_processors < 1:
        raise ValueError(f"n_processors must be >= 1, got {n_processors}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    if n_points < 0:
        raise ValueError(f"n_points must be >= 0, got {n_points}")
    if not 0 <= serial_prefix <= n_points:
        raise ValueError(f"serial_prefix must lie in [0, {n_points}], got {serial_prefix}")

    blocks = [Block(0, i, i, i + 1) for i in range(serial_prefix)]
    epoch = serial_prefix
    start = serial_prefix
    while start < n_points:
        for p in range(n_processors):
            if start >= n_points:
                break
            stop = min(start + block_size, n_points)
            blocks.append(Block(p, epoch, start, stop))
            start = stop
        epoch += 1
    return EpochPlan(n_points, n_processors, block_size, tuple(blocks), serial_prefix)


class ProposalBatch:
    """Column-oriented proposals.

    ``origins`` holds the global point index of each proposal and every
    named column has one row per proposal, e.g.
    ``ProposalBatch(origins, location=X[origins])``.
    """

    def __init__(self, origins, **columns):
        self.origins = np.asarray(origins, dtype=np.int64).reshape(-1)
        self.columns = {k: np.asarray(v) for k, v in columns.items()}
        for name, col in self.columns.items():
            if len(col) != len(self.origins):
                raise ValueError(f"column {name!r} has {len(col)} rows for {len(self.origins)} origins")

    def __len__(self):
        return len(self.origins)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def take(self, order) -> "ProposalBatch":
        return ProposalBatch(self.origins[order], **{k: v[order] for k, v in self.columns.items()})

    @classmethod
    def concat(cls, batches: Sequence["ProposalBatch"]) -> "ProposalBatch":
        batches = [b for b in batches if b is not None]
        if not batches:
            return cls(np.empty(0, dtype=np.int64))
        if len(batches) == 1:
            return batches[0]
        names = batches[0].columns.keys()
        return cls(np.concatenate([b.origins for b in batches]),
                   **{k: np.concatenate([b.columns[k] for b in batches]) for k in names})


@dataclass
class BlockAnalysis:
    """What one worker hands back for its block.

    ``proposals`` is a :class:`ProposalBatch` in block order; ``local`` is
    whatever the algorithm needs in ``commit``.
    """
    block: Block
    indices: np.ndarray
    proposed: np.ndarray
    proposals: ProposalBatch | None
    local: Any = None


class OccAlgorithm(Protocol):
    n_points: int

    def analyze(self, block: Block) -> BlockAnalysis:
        """Read-only with respect to shared state."""

    def commit(self, analysis: BlockAnalysis) -> None:
        """Apply the always-safe local results of one block."""

    def validate(self, proposals: ProposalBatch) -> np.ndarray:
        """Serially resolve proposals (ascending origin); return an accepted flag per proposal."""

    def labels(self, indices: np.ndarray) -> list:
        """Per-point assignment references, for the trace."""


@dataclass
class EpochRecord:
    epoch: int
    proposals_sent: int
    accepted: int
    worker_point_counts: tuple[int, ...]

    @property
    def rejected(self) -> int:
        return self.proposals_sent - self.accepted


class PointRecord(NamedTuple):
    global_index: int
    epoch: int
    processor: int
    was_proposed: bool
    validation_rank: int | None
    accepted: bool
    assignment_before: Any
    assignment_after: Any


@dataclass
class RunTrace:
    """Per-point and per-epoch log of one pass over the data.

    ``rank`` is the 0-based validation position within the point's epoch,
    or -1 when the point was handled locally. ``wall_ms`` holds per-epoch
    timings; it is informational and ignored by equality.
    """
    epoch: np.ndarray
    processor: np.ndarray
    proposed: np.ndarray
    rank: np.ndarray
    accepted: np.ndarray
    epochs: list[EpochRecord] = field(default_factory=list)
    assignment_before: list | None = None
    assignment_after: list | None = None
    wall_ms: list[float] = field(default_factory=list)

    @classmethod
    def empty(cls, n: int, record_assignments: bool = True) -> "RunTrace":
        return cls(
            epoch=np.full(n, -1, dtype=np.int64),
            processor=np.full(n, -1, dtype=np.int64),
            proposed=np.zeros(n, dtype=bool),
            rank=np.full(n, -1, dtype=np.int64),
            accepted=np.zeros(n, dtype=bool),
            assignment_before=[None] * n if record_assignments else None,
            assignment_after=[None] * n if record_assignments else None,
        )

    @property
    def n_points(self) -> int:
        return len(self.epoch)

    @property
    def n_proposed(self) -> int:
        return int(self.proposed.sum())

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    @property
    def n_rejected(self) -> int:
        return self.n_proposed - self.n_accepted

    def records(self) -> Iterator[PointRecord]:
        for i in range(self.n_points):
            yield PointRecord(
                i, int(self.epoch[i]), int(self.processor[i]), bool(self.proposed[i]),
                int(self.rank[i]) if self.proposed[i] else None, bool(self.accepted[i]),
                self.assignment_before[i] if self.assignment_before is not None else None,
                self.assignment_after[i] if self.assignment_after is not None else None,
            )

    def __eq__(self, other):
        if not isinstance(other, RunTrace):
            return NotImplemented
        arrays = ("epoch", "processor", "proposed", "rank", "accepted")
        return (all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
                and self.epochs == other.epochs
                and self.assignment_before == other.assignment_before
                and self.assignment_after == other.assignment_after)


def run_bsp(algorithm: OccAlgorithm, plan: EpochPlan, *, workers: int = 1,
            shuffle_blocks: int | None = None, record_assignments: bool = True) -> RunTrace:
    """Drive ``algorithm`` through every epoch of ``plan``.

    With ``workers > 1`` the block analyses of an epoch run on a thread pool;
    otherwise they run one after another, in a seeded random order when
    ``shuffle_blocks`` is given. Gathering is by block position and
    validation is by point index, so all of these give the same result.
    """
    if plan.n_points != algorithm.n_points:
        raise ValueError(f"plan covers {plan.n_points} points but the data has {algorithm.n_points}")

    trace = RunTrace.empty(plan.n_points, record_assignments)
    shuffler = np.random.default_rng(shuffle_blocks) if shuffle_blocks is not None else None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t, blocks in enumerate(plan.epochs()):
            _run_epoch(algorithm, t, blocks, trace, pool, shuffler, plan.n_processors)
    finally:
        if pool is not None:
            pool.shutdown()
    return trace


def _analyze(algorithm, block):
    try:
        return algorithm.analyze(block)
    except Exception as exc:
        raise EngineError(
            f"analysis failed in epoch {block.epoch} on processor {block.processor} "
            f"(points {block.start}..{block.stop - 1}): {exc}") from exc


def _run_epoch(algorithm, t, blocks, trace, pool, shuffler, n_processors):
    tic = time.perf_counter()
    all_idx = np.arange(blocks[0].start, blocks[-1].stop)
    if trace.assignment_before is not None:
        for i, lab in zip(all_idx, algorithm.labels(all_idx)):
            trace.assignment_before[i] = lab

    if pool is not None:
        analyses = list(pool.map(lambda blk: _analyze(algorithm, blk), blocks))
    else:
        order = range(len(blocks)) if shuffler is None else shuffler.permutation(len(blocks))
        analyses = [None] * len(blocks)
        for j in order:
            analyses[j] = _analyze(algorithm, blocks[j])

    for blk, a in zip(blocks, analyses):
        trace.epoch[blk.start:blk.stop] = t
        trace.processor[blk.start:blk.stop] = blk.processor
        trace.proposed[a.indices] = a.proposed
        algorithm.commit(a)
    proposals = ProposalBatch.concat([a.proposals for a in analyses])
    origins = proposals.origins
    if len(origins) > 1 and np.any(np.diff(origins) <= 0):
        proposals = proposals.take(np.argsort(origins, kind="stable"))
        origins = proposals.origins

    try:
        accepted = np.asarray(algorithm.validate(proposals), dtype=bool)
    except Exception as exc:
        raise EngineError(f"validation failed in epoch {t} ({len(origins)} proposals from "
                          f"points {origins[:8].tolist()}{'...' if len(origins) > 8 else ''}): {exc}") from exc
    if accepted.shape != origins.shape:
        raise EngineError(f"validation in epoch {t} returned {accepted.shape[0] if accepted.ndim else 0} "
                          f"flags for {len(origins)} proposals")

    if len(origins):
        trace.rank[origins] = np.arange(len(origins))
        trace.accepted[origins] = accepted
    if trace.assignment_after is not None:
        for i, lab in zip(all_idx, algorithm.labels(all_idx)):
            trace.assignment_after[i] = lab

    counts = [0] * n_processors
    for blk in blocks:
        counts[blk.processor] += len(blk)
    trace.epochs.append(EpochRecord(t, len(proposals), int(accepted.sum()), tuple(counts)))
    trace.wall_ms.append((time.perf_counter() - tic) * 1e3)
    logger.debug("epoch %d: %d proposals, %d accepted", t, len(proposals), trace.epochs[-1].accepted)


def equivalent_serial_order(trace: RunTrace) -> np.ndarray:
    """Serial order under which the run's outcome is reproduced exactly.

    Earlier epochs first; within an epoch, locally handled points in index
    order, then proposed points in validation order.
    """
    idx = np.arange(trace.n_points)
    within = np.where(trace.proposed, trace.rank, idx)
    return np.lexsort((within, trace.proposed, trace.epoch))
