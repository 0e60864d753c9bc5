"""Two-level CorgiPile shuffle: random block order, then a tuple shuffle per buffer fill."""

from __future__ import annotations

import math
import queue
import threading
from typing import Iterator, Sequence

import numpy as np

from corgipile.dataset.format import DatasetFile, TupleBatch
from corgipile.errors import ConfigError, PipelineError
from corgipile.rng import Purpose, substream
from corgipile.shuffle.baselines import block_permutation
from corgipile.shuffle.stream import TupleStream

EPOCH_MODES = ("full", "sample")


def corgipile_plan(
    N: int,
    n: int,
    seed: int,
    epoch: int,
    *,
    mode: str = "sample",
    fill_blocks: int | None = None,
    blocks: Sequence[int] | None = None,
) -> list[np.ndarray]:
    """Block ids loaded by each buffer fill of one epoch.

    ``mode="sample"`` takes the first ``n`` blocks of the epoch's block
    permutation (one draw of ``n`` blocks without replacement); ``"full"`` keeps
    the whole permutation so every block is visited.  The selected sequence is
    cut into fills of ``fill_blocks`` (default ``n``) blocks.  ``blocks``
    overrides the permutation with an explicit visiting order, which is how a
    parallel worker walks its own partition.
    """
    if mode not in EPOCH_MODES:
        raise ConfigError(f"corgipile epoch mode must be one of {EPOCH_MODES}, got {mode!r}")
    if blocks is None:
        if not 1 <= n <= N:
            raise ConfigError(f"buffer must hold 1..{N} blocks, got n={n}")
        order = block_permutation(seed, epoch, N)
        if mode == "sample":
            order = order[:n]
    else:
        order = np.asarray(blocks, dtype=np.int64)
        if n < 1:
            raise ConfigError(f"buffer must hold at least one block, got n={n}")
    fb = n if fill_blocks is None else fill_blocks
    if fb < 1:
        raise ConfigError("fill_blocks must be >= 1")
    return [order[i:i + fb] for i in range(0, len(order), fb)]


def _fills(ds: DatasetFile, plan: list[np.ndarray], seed: int, epoch: int, worker: int, stream: TupleStream) -> Iterator[TupleBatch]:
    """Load each fill's blocks and yield the buffer as one shuffled batch."""
    for f, blocks in enumerate(plan):
        parts = []
        for k in blocks:
            parts.append(ds.read_block(int(k)))
            stream.bytes_read += ds.index.entries[int(k)].byte_length
        buf = TupleBatch.concat(parts, dim=ds.d, sparse=ds.is_sparse)
        perm = substream(seed, Purpose.TUPLE_SHUFFLE, epoch, worker, f).permutation(len(buf))
        yield buf.take(perm)


def _double_buffered(fills: Iterator[TupleBatch]) -> Iterator[TupleBatch]:
    """Run ``fills`` on a producer thread with two buffer slots.

    The producer claims a free slot before loading the next fill, so at most
    two fills exist at once: the one being drained and the one being built.
    A slot is returned when the consumer asks for the next buffer.  A producer
    exception is re-raised to the consumer as :class:`PipelineError` at the
    point it would have swapped buffers.
    """
    slots = threading.Semaphore(2)
    handoff: queue.Queue = queue.Queue()
    stop = threading.Event()

    def produce():
        try:
            for buf in fills:
                while not slots.acquire(timeout=0.05):
                    if stop.is_set():
                        return
                if stop.is_set():
                    return
                handoff.put(("buffer", buf))
            handoff.put(("done", None))
        except BaseException as e:  # noqa: BLE001 - forwarded to the consumer
            handoff.put(("error", e))
        finally:
            close = getattr(fills, "close", None)
            if close is not None:
                close()

    worker = threading.Thread(target=produce, name="corgipile-producer", daemon=True)
    worker.start()
    try:
        while True:
            kind, val = handoff.get()
            if kind == "done":
                break
            if kind == "error":
                raise PipelineError(f"buffer producer failed: {val!r}") from val
            yield val
            slots.release()
    finally:
        stop.set()
        slots.release()
        worker.join()


def corgipile_stream(
    ds: DatasetFile,
    n: int,
    seed: int,
    epoch: int = 0,
    *,
    mode: str = "sample",
    fill_blocks: int | None = None,
    double_buffer: bool = False,
    worker: int = 0,
    blocks: Sequence[int] | None = None,
) -> TupleStream:
    """One CorgiPile epoch over ``ds`` with a buffer of ``n`` blocks.

    With ``double_buffer`` the buffer is split into two halves of
    ``ceil(n/2)`` blocks, filled by a producer thread while the consumer drains
    the other half.  The emitted sequence is exactly that of a single-buffer
    run with ``fill_blocks=ceil(n/2)``.
    """
    if double_buffer and fill_blocks is None:
        fill_blocks = math.ceil(n / 2)
    plan = corgipile_plan(ds.N, n, seed, epoch, mode=mode, fill_blocks=fill_blocks, blocks=blocks)
    info = {
        "n": n,
        "mode": mode,
        "double_buffer": double_buffer,
        "worker": worker,
        "fills": [p.tolist() for p in plan],
    }
    stream = TupleStream(iter(()), "corgipile", epoch, info)
    source = _fills(ds, plan, seed, epoch, worker, stream)
    stream._source = _double_buffered(source) if double_buffer else source
    return stream


def corgipile_psi(counts: np.ndarray, starts: np.ndarray, plan: list[np.ndarray], seed: int, epoch: int, worker: int = 0) -> np.ndarray:
    """Storage positions a CorgiPile epoch would emit, computed from the index alone.

    Mirrors :func:`corgipile_stream` without reading data: used by the Monte
    Carlo inclusion estimator and the parallel order reference.
    """
    out = []
    for f, blocks in enumerate(plan):
        pos = np.concatenate([np.arange(starts[k], starts[k] + counts[k]) for k in blocks])
        perm = substream(seed, Purpose.TUPLE_SHUFFLE, epoch, worker, f).permutation(len(pos))
        out.append(pos[perm])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
