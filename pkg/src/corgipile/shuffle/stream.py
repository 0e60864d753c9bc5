"""Epoch-scoped tuple streams."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from corgipile.dataset.format import Tuple, TupleBatch
from corgipile.errors import PipelineError


class TupleStream:
    """One epoch of emitted tuples plus the realized index sequence.

    Consumers pull :meth:`chunks` (columnar runs, emission order preserved) or
    iterate tuple by tuple.  Ids, labels and storage positions of everything
    handed out are recorded as the stream is consumed, so ``psi`` is the
    realized sequence once the stream is exhausted.  Streams are single-use.
    """

    def __init__(self, chunks: Iterator[TupleBatch], name: str, epoch: int = 0, info: dict | None = None):
        self._source = chunks
        self.name = name
        self.epoch = epoch
        self.info = dict(info or {})
        self.bytes_read = 0
        self._ids: list[np.ndarray] = []
        self._labels: list[np.ndarray] = []
        self._consumed = False

    def chunks(self) -> Iterator[TupleBatch]:
        if self._consumed:
            raise RuntimeError(f"{self.name} stream for epoch {self.epoch} was already consumed")
        self._consumed = True
        try:
            for chunk in self._source:
                if len(chunk) == 0:
                    continue
                self._ids.append(chunk.ids)
                self._labels.append(chunk.labels)
                yield chunk
        except PipelineError as e:
            e.partial_ids = self.psi.tolist()
            raise
        finally:
            close = getattr(self._source, "close", None)
            if close is not None:
                close()

    def __iter__(self) -> Iterator[Tuple]:
        for chunk in self.chunks():
            yield from chunk

    def drain(self) -> "TupleStream":
        """Consume the whole stream, keeping only its id/label record."""
        for _ in self.chunks():
            pass
        return self

    @property
    def psi(self) -> np.ndarray:
        return np.concatenate(self._ids) if self._ids else np.zeros(0, dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate(self._labels) if self._labels else np.zeros(0, dtype=np.float32)

    def __len__(self) -> int:
        return int(sum(len(a) for a in self._ids))

    def __repr__(self) -> str:
        return f"TupleStream({self.name}, epoch={self.epoch}, emitted={len(self)})"


class BlockPool:
    """Blocks held in memory while some of their tuples are still resident.

    Used by the scan-based strategies (sliding window, MRS) that keep a set of
    tuple positions buffered: a block is dropped once it is fully scanned and
    none of its tuples are referenced.
    """

    def __init__(self, ds, stream: TupleStream):
        self.ds = ds
        self.stream = stream
        self.starts = ds.index.starts
        self.blocks: dict[int, TupleBatch] = {}
        self.refs: dict[int, int] = {}
        self.finished = -1

    def load(self, k: int) -> TupleBatch:
        batch = self.ds.read_block(k)
        self.stream.bytes_read += self.ds.index.entries[k].byte_length
        self.blocks[k] = batch
        self.refs.setdefault(k, 0)
        return batch

    def block_of(self, pos: int) -> int:
        return int(np.searchsorted(self.starts, pos, side="right") - 1)

    def ref(self, pos: int, count: int = 1) -> None:
        k = self.block_of(pos)
        self.refs[k] = self.refs.get(k, 0) + count

    def unref(self, pos: int, count: int = 1) -> None:
        k = self.block_of(pos)
        self.refs[k] -= count
        self._maybe_evict(k)

    def finish_block(self, k: int) -> None:
        """Mark block ``k`` (and every earlier block) as fully scanned."""
        self.finished = k
        self._maybe_evict(k)

    def _maybe_evict(self, k: int) -> None:
        if self.refs.get(k, 0) <= 0 and k <= self.finished:
            self.blocks.pop(k, None)
            self.refs.pop(k, None)

    def gather(self, positions) -> TupleBatch:
        positions = np.asarray(positions, dtype=np.int64)
        if len(positions) == 0:
            return TupleBatch.concat([], dim=self.ds.d, sparse=self.ds.is_sparse)
        blk = np.searchsorted(self.starts, positions, side="right") - 1
        uniq, inv = np.unique(blk, return_inverse=True)
        parts = [self.blocks[int(k)] for k in uniq]
        base = np.zeros(len(uniq) + 1, dtype=np.int64)
        np.cumsum([len(p) for p in parts], out=base[1:])
        cat = TupleBatch.concat(parts)
        return cat.take(base[inv] + positions - self.starts[blk])
