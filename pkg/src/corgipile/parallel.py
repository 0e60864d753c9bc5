"""Multi-worker CorgiPile simulated in lockstep on one machine.

Every worker derives the same block permutation from the shared seed and
takes one contiguous chunk of it.  At each step every worker pulls
``batch_size / workers`` tuples from its own CorgiPile stream, gradients are
summed across workers (the simulated all-reduce) and divided by the total
tuple count, and the shared model takes one step.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from corgipile.dataset.format import DatasetFile, TupleBatch
from corgipile.errors import ConfigError, DivergenceError
from corgipile.sgd import kernels
from corgipile.sgd.model import KIND_CODE, Model
from corgipile.sgd.schedule import LrSchedule
from corgipile.sgd.train import EpochStats, TrainResult, evaluate
from corgipile.shuffle.baselines import block_permutation
from corgipile.shuffle.corgipile import corgipile_plan, corgipile_psi, corgipile_stream
from corgipile.shuffle.stream import TupleStream


@dataclass
class ParallelConfig:
    """``workers`` logical workers, each buffering ``buffer_blocks`` blocks.

    ``batch_size`` is the global batch; each worker contributes
    ``batch_size / workers`` tuples per step.  ``block_order`` replaces the
    seeded block permutation with a fixed one (every epoch), for replaying a
    known layout.
    """

    workers: int = 1
    buffer_blocks: int = 1
    batch_size: int = 1
    seed: int = 0
    double_buffer: bool = False
    block_order: Sequence[int] | None = None

    def validate(self, N: int) -> None:
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.workers > N:
            raise ConfigError(f"{self.workers} workers but only {N} blocks")
        if self.buffer_blocks < 1:
            raise ConfigError("each worker needs a buffer of at least one block")
        if self.batch_size < 1 or self.batch_size % self.workers:
            raise ConfigError(f"batch size {self.batch_size} must be a positive multiple of {self.workers} workers")
        if self.block_order is not None and sorted(int(k) for k in self.block_order) != list(range(N)):
            raise ConfigError("block_order must be a permutation of all block ids")

    @property
    def per_worker_batch(self) -> int:
        return self.batch_size // self.workers

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["block_order"] is not None:
            d["block_order"] = [int(k) for k in d["block_order"]]
        return d


def partition_blocks(seed: int, epoch: int, N: int, PN: int, order: Sequence[int] | None = None) -> list[np.ndarray]:
    """Split the epoch's shared block permutation into ``PN`` contiguous chunks.

    Chunk sizes are ``ceil(N/PN)`` for the first ``N mod PN`` workers and
    ``floor(N/PN)`` for the rest.
    """
    if not 1 <= PN <= N:
        raise ConfigError(f"need 1 <= workers <= N, got {PN} workers for {N} blocks")
    perm = block_permutation(seed, epoch, N) if order is None else np.asarray(order, dtype=np.int64)
    return np.array_split(perm, PN)


def worker_streams(ds: DatasetFile, cfg: ParallelConfig, epoch: int) -> list[TupleStream]:
    parts = partition_blocks(cfg.seed, epoch, ds.N, cfg.workers, cfg.block_order)
    return [
        corgipile_stream(ds, cfg.buffer_blocks, cfg.seed, epoch, mode="full", double_buffer=cfg.double_buffer, worker=i, blocks=part)
        for i, part in enumerate(parts)
    ]


class _Cursor:
    """Pulls exactly ``k`` tuples at a time out of a chunked stream."""

    def __init__(self, stream: TupleStream):
        self._it = stream.chunks()
        self._chunk: TupleBatch | None = None
        self._csr = None
        self._pos = 0

    def take(self, k: int) -> list[tuple[TupleBatch, tuple, int, int]]:
        pieces = []
        while k > 0:
            if self._chunk is None or self._pos == len(self._chunk):
                self._chunk = next(self._it, None)
                self._pos = 0
                if self._chunk is None:
                    break
                self._csr = self._chunk.csr()
            t = min(k, len(self._chunk) - self._pos)
            pieces.append((self._chunk, self._csr, self._pos, self._pos + t))
            self._pos += t
            k -= t
        return pieces

    def close(self) -> None:
        self._it.close()


def run_lockstep(
    ds: DatasetFile,
    cfg: ParallelConfig,
    epoch: int,
    model: Model | None = None,
    eta: float = 0.0,
    record: list | None = None,
) -> EpochStats:
    """One synchronized epoch across all workers.

    With ``model`` set, each step sums the workers' gradients, divides by the
    step's tuple count and updates ``model`` in place.  ``record`` (if given)
    receives, per step, the list of per-worker id arrays consumed.
    """
    cfg.validate(ds.N)
    streams = worker_streams(ds, cfg, epoch)
    cursors = [_Cursor(s) for s in streams]
    accs = [kernels.Accumulator(model.K, model.d) for _ in streams] if model is not None else None
    code = KIND_CODE[model.kind] if model is not None else -1
    total, seen, step = 0.0, 0, 0
    t0 = time.monotonic()
    try:
        while True:
            consumed = []
            for w, cur in enumerate(cursors):
                pieces = cur.take(cfg.per_worker_batch)
                ids = [chunk.ids[lo:hi] for chunk, _, lo, hi in pieces]
                consumed.append(np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64))
                if model is None:
                    continue
                for chunk, (indptr, indices, values), lo, hi in pieces:
                    losses = np.empty(len(chunk))
                    bad = kernels.accumulate_run(
                        code, model.W, model.bias, indptr, indices, values, chunk.labels, lo, hi, losses, *accs[w].buffers()
                    )
                    if bad >= 0:
                        raise DivergenceError(f"non-finite loss on worker {w} at step {step} of epoch {epoch}", epoch, step)
                    total += float(losses[lo:hi].sum())
            count = sum(len(c) for c in consumed)
            if count == 0:
                break
            seen += count
            if record is not None:
                record.append(consumed)
            if model is not None:
                for w in range(1, len(accs)):
                    kernels.merge_into(*accs[0].buffers(), *accs[w].buffers())
                kernels.apply_update(model.W, model.bias, model.lam, eta, *accs[0].buffers())
            step += 1
    finally:
        for cur in cursors:
            cur.close()
    stats = EpochStats(epoch, total / seen if seen and model is not None else float("nan"))
    stats.seconds = time.monotonic() - t0
    stats.bytes_read = sum(s.bytes_read for s in streams)
    stats.tuples_seen = seen
    stats.lr = eta
    return stats


def parallel_train(
    ds: DatasetFile,
    cfg: ParallelConfig,
    model: Model,
    schedule: LrSchedule,
    epochs: int,
    eval_ds: DatasetFile | None = None,
    evaluate_train: bool = True,
) -> TrainResult:
    """Lockstep data-parallel CorgiPile training; ``model`` is the untouched starting point."""
    cfg.validate(ds.N)
    model = model.copy()
    history = []
    for s in range(epochs):
        stats = run_lockstep(ds, cfg, s, model, schedule(s))
        if evaluate_train:
            stats.train_acc = evaluate(model, ds).score
        if eval_ds is not None:
            stats.test_acc = evaluate(model, eval_ds).score
        history.append(stats)
    return TrainResult(model, history, info={"parallel": cfg.to_dict()})


# ---------------------------------------------------------------- order equivalence


@dataclass
class EquivalenceReport:
    equal: bool
    steps: int
    reference_steps: int
    first_divergence: int | None
    workers: int
    reference_buffer_blocks: int
    reference_fills: list[list[int]]
    step_block_origins: list[list[int]] = field(default_factory=list)
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def reference_schedule(ds: DatasetFile, cfg: ParallelConfig, epoch: int, single_seed: int, single_buffer_blocks: int):
    """The single-process reference: per-step id multisets and its buffer fills.

    The reference buffer holds ``single_buffer_blocks`` blocks.  Fill ``f``
    loads, worker by worker, the blocks each worker buffers in its fill ``f``;
    its tuple order is the workers' fill permutations taken ``batch/workers``
    at a time, side by side.  Everything is derived from the block index and
    the seed protocol, without reading tuple data.
    """
    if single_buffer_blocks != cfg.workers * cfg.buffer_blocks:
        raise ConfigError(
            f"reference buffer must hold workers x per-worker blocks = {cfg.workers * cfg.buffer_blocks}, got {single_buffer_blocks}"
        )
    counts = ds.index.counts
    starts = ds.index.starts
    ids_at = np.concatenate([ds.read_block(k).ids for k in range(ds.N)])
    parts = partition_blocks(single_seed, epoch, ds.N, cfg.workers, cfg.block_order)
    plans = [corgipile_plan(ds.N, cfg.buffer_blocks, single_seed, epoch, mode="full", blocks=p) for p in parts]
    fills = []
    for f in range(max(len(p) for p in plans)):
        fills.append([int(k) for p in plans if f < len(p) for k in p[f]])
    seqs = [ids_at[corgipile_psi(counts, starts, plan, single_seed, epoch, worker=w)] for w, plan in enumerate(plans)]
    q = cfg.per_worker_batch
    steps = []
    for t in range(max(-(-len(s) // q) for s in seqs)):
        steps.append(np.sort(np.concatenate([s[t * q:(t + 1) * q] for s in seqs])))
    return steps, fills


def order_equivalence(
    ds: DatasetFile,
    cfg: ParallelConfig,
    single_seed: int | None = None,
    single_buffer_blocks: int | None = None,
    epoch: int = 0,
) -> EquivalenceReport:
    """Compare what the parallel workers consume per step with the single-process reference.

    The workers are actually run (their streams read and shuffle data); the
    reference is rebuilt independently from the block index.  Step numbers in
    the report are 1-based.
    """
    cfg.validate(ds.N)
    single_seed = cfg.seed if single_seed is None else single_seed
    single_buffer_blocks = cfg.workers * cfg.buffer_blocks if single_buffer_blocks is None else single_buffer_blocks
    ref, fills = reference_schedule(ds, cfg, epoch, single_seed, single_buffer_blocks)
    record: list = []
    run_lockstep(ds, cfg, epoch, record=record)
    block_of = np.concatenate([np.full(c, k) for k, c in enumerate(ds.index.counts)])
    pos_of = {}
    for k in range(ds.N):
        for p, tid in enumerate(ds.read_block(k).ids, start=int(ds.index.starts[k])):
            pos_of[int(tid)] = p
    origins = []
    first = None
    for t, per_worker in enumerate(record):
        got = np.sort(np.concatenate(per_worker))
        origins.append(sorted({int(block_of[pos_of[int(i)]]) for i in got}))
        if first is None and (t >= len(ref) or not np.array_equal(got, ref[t])):
            first = t + 1
    if first is None and len(record) != len(ref):
        first = min(len(record), len(ref)) + 1
    detail = "per-step multisets equal" if first is None else f"first differing step: {first}"
    return EquivalenceReport(
        first is None, len(record), len(ref), first, cfg.workers, single_buffer_blocks, fills, origins, detail
    )
