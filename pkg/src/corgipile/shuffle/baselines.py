"""The non-CorgiPile strategies: no shuffle, shuffle once, epoch shuffle,
sliding window, multiplexed reservoir sampling and block-only shuffle."""

from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np

from corgipile.dataset.format import DatasetFile
from corgipile.dataset.transforms import full_shuffle
from corgipile.errors import BudgetError, ConfigError
from corgipile.rng import Purpose, substream
from corgipile.shuffle.stream import BlockPool, TupleStream

TUPLE_CHUNK = 4096


def _scan(ds: DatasetFile, stream: TupleStream, order=None):
    for k in range(ds.N) if order is None else order:
        k = int(k)
        batch = ds.read_block(k)
        stream.bytes_read += ds.index.entries[k].byte_length
        yield batch


def no_shuffle_stream(ds: DatasetFile, epoch: int = 0) -> TupleStream:
    """Stored order, sequential block reads."""
    stream = TupleStream(iter(()), "no_shuffle", epoch)
    stream._source = _scan(ds, stream)
    return stream


class ShuffledCopy:
    """The offline shuffled copy behind Shuffle Once, created on first use.

    ``seconds`` and ``bytes`` record the one-time cost of producing the copy.
    """

    def __init__(self, ds: DatasetFile, seed: int, path: str | os.PathLike | None = None):
        self.source = ds
        self.seed = seed
        self.path = Path(path) if path else ds.path.with_name(f"{ds.path.name}.shuffled-{seed}")
        self.seconds = 0.0
        self.created = False
        self._ds: DatasetFile | None = None

    def open(self) -> DatasetFile:
        if self._ds is None:
            if self.path.exists():
                self._ds = DatasetFile(self.path)
            else:
                t0 = time.monotonic()
                self._ds = full_shuffle(self.source, self.seed, self.path)
                self.seconds = time.monotonic() - t0
                self.created = True
        return self._ds

    @property
    def bytes(self) -> int:
        return self.path.stat().st_size if self.path.exists() else 0

    def storage_factor(self) -> float:
        """Total bytes on disk (original plus copy) relative to the original."""
        orig = self.source.path.stat().st_size
        return (orig + self.bytes) / orig

    def remove(self) -> None:
        if self._ds is not None:
            self._ds.close()
            self._ds = None
        self.path.unlink(missing_ok=True)


def shuffle_once_stream(copy: ShuffledCopy, epoch: int = 0) -> TupleStream:
    """Sequential scan of the shuffled copy; the same sequence every epoch."""
    shuffled = copy.open()
    stream = TupleStream(iter(()), "shuffle_once", epoch, {"copy": str(copy.path)})
    stream._source = _scan(shuffled, stream)
    return stream


def epoch_shuffle_stream(ds: DatasetFile, seed: int, epoch: int, index_budget: int = 10_000_000) -> TupleStream:
    """Fresh uniform permutation each epoch, fetched with tuple-level random reads."""
    if ds.m > index_budget:
        raise BudgetError(f"epoch shuffle needs an id table of {ds.m} entries, budget is {index_budget}")
    perm = substream(seed, Purpose.EPOCH_SHUFFLE, epoch).permutation(ds.m)
    stream = TupleStream(iter(()), "epoch_shuffle", epoch)
    _, lens = ds.tuple_table()

    def gen():
        for s in range(0, ds.m, TUPLE_CHUNK):
            part = perm[s:s + TUPLE_CHUNK]
            stream.bytes_read += int(lens[part].sum())
            yield ds.read_tuples_at(part)

    stream._source = gen()
    return stream


def sliding_window_stream(ds: DatasetFile, window_fraction: float, seed: int, epoch: int = 0) -> TupleStream:
    """Window of ``w`` scanned tuples; emit a random occupant, refill its slot.

    Once the scan is exhausted the remaining occupants are emitted in uniformly
    random order, so every epoch is a permutation.
    """
    if not 0 < window_fraction <= 1:
        raise ConfigError(f"window fraction must be in (0, 1], got {window_fraction}")
    m = ds.m
    w = max(1, math.floor(window_fraction * m + 1e-9))
    rng = substream(seed, Purpose.WINDOW, epoch)
    slots = rng.integers(0, w, size=max(m - w, 0))
    stream = TupleStream(iter(()), "sliding_window", epoch, {"window": w})

    def gen():
        pool = BlockPool(ds, stream)
        window = np.empty(w, dtype=np.int64)
        filled = 0
        step = 0
        for k in range(ds.N):
            pool.load(k)
            lo, hi = int(ds.index.starts[k]), int(ds.index.starts[k + 1])
            out = []
            for pos in range(lo, hi):
                pool.ref(pos)
                if filled < w:
                    window[filled] = pos
                    filled += 1
                    continue
                j = slots[step]
                step += 1
                out.append(int(window[j]))
                window[j] = pos
            if out:
                chunk = pool.gather(out)
                for p in out:
                    pool.unref(p)
            pool.finish_block(k)
            if out:
                yield chunk
        tail = window[:filled][rng.permutation(filled)]
        if len(tail):
            yield pool.gather(tail)

    stream._source = gen()
    return stream


def mrs_stream(ds: DatasetFile, buffer_fraction: float, seed: int, epoch: int = 0, loop_ratio: int = 1) -> TupleStream:
    """Deterministic interleave of the two MRS workers.

    Scan worker: reservoir sampling (Algorithm R) into ``B1`` of capacity
    ``floor(buffer_fraction * m / 2)``; every tuple the reservoir drops (the
    incoming tuple, or the occupant it replaces) is emitted.  Loop worker:
    after each scan emission, ``loop_ratio`` tuples are emitted from ``B2``, a
    shuffled snapshot of ``B1`` walked without replacement and re-taken from
    ``B1`` whenever it runs out.  Tuples may repeat within an epoch.
    """
    if not 0 < buffer_fraction <= 1:
        raise ConfigError(f"buffer fraction must be in (0, 1], got {buffer_fraction}")
    if loop_ratio < 0:
        raise ConfigError("loop_ratio must be >= 0")
    m = ds.m
    cap = math.floor(buffer_fraction * m / 2 + 1e-9)
    scan_rng = substream(seed, Purpose.RESERVOIR, epoch)
    loop_rng = substream(seed, Purpose.LOOP_BUFFER, epoch)
    draws = scan_rng.random(max(m - cap, 0))
    stream = TupleStream(iter(()), "mrs", epoch, {"reservoir": cap, "loop_ratio": loop_ratio})
    stream.info["scan_emitted"] = 0
    stream.info["loop_emitted"] = 0

    def gen():
        pool = BlockPool(ds, stream)
        b1 = np.empty(cap, dtype=np.int64)
        b2 = np.zeros(0, dtype=np.int64)
        cursor = 0
        t = 0
        for k in range(ds.N):
            pool.load(k)
            lo, hi = int(ds.index.starts[k]), int(ds.index.starts[k + 1])
            out: list[int] = []
            released: list[int] = []
            for pos in range(lo, hi):
                if t < cap:
                    b1[t] = pos
                    pool.ref(pos)
                    t += 1
                    continue
                j = min(int(draws[t - cap] * (t + 1)), t)
                if j < cap:
                    dropped = int(b1[j])
                    b1[j] = pos
                    pool.ref(pos)
                    released.append(dropped)
                else:
                    dropped = pos
                t += 1
                out.append(dropped)
                stream.info["scan_emitted"] += 1
                for _ in range(loop_ratio):
                    if cap == 0:
                        break
                    if cursor >= len(b2):
                        for p in b2:
                            released.append(int(p))
                        b2 = b1[loop_rng.permutation(cap)].copy()
                        for p in b2:
                            pool.ref(int(p))
                        cursor = 0
                    out.append(int(b2[cursor]))
                    cursor += 1
                    stream.info["loop_emitted"] += 1
            if out:
                chunk = pool.gather(out)
            for p in released:
                pool.unref(p)
            pool.finish_block(k)
            if out:
                yield chunk

    stream._source = gen()
    return stream


def block_permutation(seed: int, epoch: int, N: int) -> np.ndarray:
    """The shared per-epoch block order used by block-level shufflers and worker partitioning."""
    return substream(seed, Purpose.BLOCK_ORDER, epoch).permutation(N)


def block_only_stream(ds: DatasetFile, seed: int, epoch: int) -> TupleStream:
    """Blocks in a fresh random order, tuples inside each block in stored order."""
    order = block_permutation(seed, epoch, ds.N)
    stream = TupleStream(iter(()), "block_only", epoch, {"block_order": order.tolist()})
    stream._source = _scan(ds, stream, order)
    return stream
