"""Block-addressable binary dataset files.

Layout (all integers little-endian)::

    [header, 128 bytes]
        magic "CORGIDS\\0", version u32, task u8, encoding u8, pad u16,
        num_classes u32, pad u32, m u64, d u64, block_size_bytes u64,
        tuples_per_block u64, num_blocks u64, data_offset u64,
        index_offset u64, header_crc u32, zero padding
    [data region]   back-to-back blocks of encoded tuples
    [block index]   num_blocks x (block_id u64, byte_offset u64,
                    byte_length u64, tuple_count u64, crc32 u32)
    [trailer]       index_crc u32, magic "CORGIEND"

Dense tuple record:  id u64 | label f32 | d x f32
Sparse tuple record: id u64 | label f32 | nnz u64 | nnz x u32 index | nnz x f32 value
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from corgipile.errors import DatasetFormatError, DimensionError, IntegrityError

MAGIC = b"CORGIDS\x00"
END_MAGIC = b"CORGIEND"
FORMAT_VERSION = 1
HEADER_SIZE = 128
MB = 1024 * 1024
DEFAULT_BLOCK_SIZE = 10 * MB
BLOCK_SIZE_CHOICES = (2 * MB, 10 * MB, 50 * MB)

_HEADER = struct.Struct("<8sIBBHII7Q")
_INDEX_ENTRY = struct.Struct("<QQQQI")
_TRAILER = struct.Struct("<I8s")
_SPARSE_HEAD = struct.Struct("<QfQ")

TASKS = ("binary", "multiclass", "regression")
ENCODINGS = ("dense", "sparse")


def dense_record_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("label", "<f4"), ("x", "<f4", (dim,))])


def dense_tuple_bytes(dim: int) -> int:
    return 12 + 4 * dim


def sparse_tuple_bytes(nnz: int) -> int:
    return _SPARSE_HEAD.size + 8 * nnz


def block_size_for(tuples_per_block: int, dim: int) -> int:
    """Byte budget that packs exactly ``tuples_per_block`` dense tuples per block."""
    return tuples_per_block * dense_tuple_bytes(dim)


@dataclass(eq=False)
class Tuple:
    """One training example.  ``indices is None`` means a dense feature vector."""

    id: int
    label: float
    values: np.ndarray
    indices: np.ndarray | None = None

    @property
    def is_sparse(self) -> bool:
        return self.indices is not None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tuple):
            return NotImplemented
        if self.id != other.id or np.float32(self.label) != np.float32(other.label):
            return False
        if (self.indices is None) != (other.indices is None):
            return False
        if self.indices is not None and not np.array_equal(self.indices, other.indices):
            return False
        return np.array_equal(np.asarray(self.values, np.float32), np.asarray(other.values, np.float32))

    def __repr__(self) -> str:
        if self.indices is None:
            return f"Tuple(id={self.id}, label={self.label:g}, dense[{len(self.values)}])"
        pairs = ", ".join(f"({i},{v:g})" for i, v in zip(self.indices, self.values))
        return f"Tuple(id={self.id}, label={self.label:g}, sparse[{pairs}])"


class TupleBatch(Sequence[Tuple]):
    """Columnar run of tuples: the unit passed between readers, shufflers and trainers.

    Dense batches hold a ``(k, d)`` float32 matrix; sparse batches hold CSR arrays.
    Indexing and iteration yield :class:`Tuple` objects.
    """

    def __init__(
        self,
        ids: np.ndarray,
        labels: np.ndarray,
        dim: int,
        dense: np.ndarray | None = None,
        indptr: np.ndarray | None = None,
        indices: np.ndarray | None = None,
        values: np.ndarray | None = None,
    ):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.float32)
        self.dim = int(dim)
        self.dense = dense
        if dense is None:
            if indptr is None:
                raise ValueError("sparse batch needs indptr/indices/values")
            self.indptr = np.asarray(indptr, dtype=np.int64)
            self.indices = np.asarray(indices, dtype=np.int32)
            self.values = np.asarray(values, dtype=np.float32)
        else:
            self.dense = np.asarray(dense, dtype=np.float32).reshape(len(self.ids), self.dim)
            self.indptr = self.indices = self.values = None

    @property
    def is_sparse(self) -> bool:
        return self.dense is None

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return self.take(np.arange(len(self))[i])
        i = int(i)
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        if self.dense is not None:
            return Tuple(int(self.ids[i]), float(self.labels[i]), self.dense[i].copy())
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return Tuple(int(self.ids[i]), float(self.labels[i]), self.values[lo:hi].copy(), self.indices[lo:hi].copy())

    def __iter__(self) -> Iterator[Tuple]:
        for i in range(len(self)):
            yield self[i]

    def take(self, order) -> "TupleBatch":
        order = np.asarray(order, dtype=np.int64)
        if self.dense is not None:
            return TupleBatch(self.ids[order], self.labels[order], self.dim, dense=self.dense[order])
        lengths = np.diff(self.indptr)[order]
        indptr = np.zeros(len(order) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if len(order):
            starts = self.indptr[order]
            gather = np.repeat(starts - indptr[:-1], lengths) + np.arange(indptr[-1])
        else:
            gather = np.zeros(0, dtype=np.int64)
        return TupleBatch(
            self.ids[order], self.labels[order], self.dim,
            indptr=indptr, indices=self.indices[gather], values=self.values[gather],
        )

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR view; dense batches are expanded with every coordinate present."""
        if self.dense is None:
            return self.indptr, self.indices, self.values
        k = len(self)
        indptr = np.arange(k + 1, dtype=np.int64) * self.dim
        indices = np.tile(np.arange(self.dim, dtype=np.int32), k)
        return indptr, indices, self.dense.reshape(-1)

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        out = np.zeros((len(self), self.dim), dtype=np.float32)
        rows = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        out[rows, self.indices] = self.values
        return out

    def feature_column(self, j: int) -> np.ndarray:
        """Values of feature ``j`` for every tuple; missing sparse entries read as 0."""
        if self.dense is not None:
            return self.dense[:, j].copy()
        out = np.zeros(len(self), dtype=np.float32)
        hit = self.indices == j
        rows = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        out[rows[hit]] = self.values[hit]
        return out

    @staticmethod
    def concat(batches: Sequence["TupleBatch"], dim: int | None = None, sparse: bool | None = None) -> "TupleBatch":
        batches = [b for b in batches]
        if not batches:
            if dim is None:
                raise ValueError("cannot concatenate zero batches without a dimension")
            if sparse:
                return TupleBatch(np.zeros(0), np.zeros(0), dim, indptr=np.zeros(1), indices=np.zeros(0), values=np.zeros(0))
            return TupleBatch(np.zeros(0), np.zeros(0), dim, dense=np.zeros((0, dim)))
        if len(batches) == 1:
            return batches[0]
        d = batches[0].dim
        ids = np.concatenate([b.ids for b in batches])
        labels = np.concatenate([b.labels for b in batches])
        if batches[0].dense is not None:
            return TupleBatch(ids, labels, d, dense=np.concatenate([b.dense for b in batches]))
        lengths = np.concatenate([np.diff(b.indptr) for b in batches])
        indptr = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        return TupleBatch(
            ids, labels, d, indptr=indptr,
            indices=np.concatenate([b.indices for b in batches]),
            values=np.concatenate([b.values for b in batches]),
        )

    @staticmethod
    def from_tuples(tuples: Iterable[Tuple], dim: int, encoding: str = "dense") -> "TupleBatch":
        tuples = list(tuples)
        ids = np.array([t.id for t in tuples], dtype=np.int64)
        labels = np.array([t.label for t in tuples], dtype=np.float32)
        if encoding == "dense":
            dense = np.zeros((len(tuples), dim), dtype=np.float32)
            for r, t in enumerate(tuples):
                if t.indices is None:
                    dense[r] = t.values
                else:
                    dense[r, t.indices] = t.values
            return TupleBatch(ids, labels, dim, dense=dense)
        idx, vals, lengths = [], [], []
        for t in tuples:
            if t.indices is None:
                nz = np.flatnonzero(t.values)
                idx.append(nz)
                vals.append(np.asarray(t.values)[nz])
            else:
                idx.append(np.asarray(t.indices))
                vals.append(np.asarray(t.values))
            lengths.append(len(idx[-1]))
        indptr = np.zeros(len(tuples) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
        return TupleBatch(ids, labels, dim, indptr=indptr, indices=cat(idx, np.int32), values=cat(vals, np.float32))


@dataclass
class DatasetMeta:
    m: int
    d: int
    task: str = "binary"
    num_classes: int = 2
    encoding: str = "dense"
    block_size_bytes: int = DEFAULT_BLOCK_SIZE
    tuples_per_block: int = 0  # 0 for sparse files: block sizes vary
    version: int = FORMAT_VERSION

    def validate(self) -> None:
        if self.task not in TASKS:
            raise DatasetFormatError(f"unknown task {self.task!r}")
        if self.encoding not in ENCODINGS:
            raise DatasetFormatError(f"unknown encoding {self.encoding!r}")
        if self.m < 1 or self.d < 1:
            raise DatasetFormatError(f"need m >= 1 and d >= 1, got m={self.m}, d={self.d}")
        if self.task == "multiclass" and self.num_classes < 2:
            raise DatasetFormatError("multiclass task needs num_classes >= 2")


@dataclass(frozen=True)
class BlockEntry:
    block_id: int
    byte_offset: int
    byte_length: int
    tuple_count: int
    crc32: int


@dataclass
class BlockIndex:
    entries: list[BlockEntry]
    starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.array([e.tuple_count for e in self.entries], dtype=np.int64)
        self.starts = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.starts[1:])

    @property
    def N(self) -> int:
        return len(self.entries)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def validate(self, m: int, data_offset: int, index_offset: int) -> None:
        if self.N < 1:
            raise DatasetFormatError("block index is empty")
        pos = data_offset
        for k, e in enumerate(self.entries):
            if e.block_id != k:
                raise DatasetFormatError(f"block index entry {k} has id {e.block_id}")
            if e.byte_offset != pos or e.byte_length <= 0 or e.tuple_count <= 0:
                raise DatasetFormatError(f"block {k} does not tile the data region")
            pos += e.byte_length
        if pos != index_offset:
            raise DatasetFormatError("blocks do not cover the data region exactly")
        if int(self.starts[-1]) != m:
            raise DatasetFormatError(f"block tuple counts sum to {int(self.starts[-1])}, header says {m}")

    def block_of(self, positions) -> np.ndarray:
        return np.searchsorted(self.starts, positions, side="right") - 1


def _encode_sparse(t: Tuple) -> bytes:
    idx = np.asarray(t.indices, dtype="<u4")
    return _SPARSE_HEAD.pack(t.id, t.label, len(idx)) + idx.tobytes() + np.asarray(t.values, dtype="<f4").tobytes()


def _decode_sparse(raw: bytes, count: int, dim: int) -> TupleBatch:
    ids = np.empty(count, dtype=np.int64)
    labels = np.empty(count, dtype=np.float32)
    indptr = np.zeros(count + 1, dtype=np.int64)
    idx_parts, val_parts = [], []
    off = 0
    buf = memoryview(raw)
    for r in range(count):
        tid, lab, nnz = _SPARSE_HEAD.unpack_from(buf, off)
        off += _SPARSE_HEAD.size
        idx_parts.append(np.frombuffer(buf, dtype="<u4", count=nnz, offset=off))
        off += 4 * nnz
        val_parts.append(np.frombuffer(buf, dtype="<f4", count=nnz, offset=off))
        off += 4 * nnz
        ids[r], labels[r] = tid, lab
        indptr[r + 1] = indptr[r] + nnz
    if off != len(raw):
        raise DatasetFormatError("sparse block length does not match its tuples")
    indices = np.concatenate(idx_parts).astype(np.int32) if idx_parts else np.zeros(0, np.int32)
    values = np.concatenate(val_parts).astype(np.float32) if val_parts else np.zeros(0, np.float32)
    return TupleBatch(ids, labels, dim, indptr=indptr, indices=indices, values=values)


class DatasetWriter:
    """Streams tuples into a new dataset file, packing them into blocks by byte budget.

    Use as a context manager; the header and block index are written on close.
    A failed write removes the partial file.
    """

    def __init__(
        self,
        path: str | os.PathLike,
        dim: int,
        task: str = "binary",
        num_classes: int = 2,
        encoding: str = "dense",
        block_size_bytes: int = DEFAULT_BLOCK_SIZE,
    ):
        self.path = Path(path)
        self.meta = DatasetMeta(m=0, d=int(dim), task=task, num_classes=num_classes if task == "multiclass" else (2 if task == "binary" else 1),
                                encoding=encoding, block_size_bytes=int(block_size_bytes))
        if task not in TASKS or encoding not in ENCODINGS:
            raise DatasetFormatError(f"bad task/encoding {task!r}/{encoding!r}")
        if dim < 1:
            raise DatasetFormatError("dimension must be >= 1")
        if encoding == "dense":
            self._tb = dense_tuple_bytes(dim)
            if block_size_bytes < self._tb:
                raise DatasetFormatError(f"block_size_bytes={block_size_bytes} smaller than one {self._tb}-byte tuple")
            self.meta.tuples_per_block = block_size_bytes // self._tb
            self._rec = dense_record_dtype(dim)
        self._f = open(self.path, "wb")
        self._f.write(b"\x00" * HEADER_SIZE)
        self._pos = HEADER_SIZE
        self._entries: list[BlockEntry] = []
        self._cur: list[bytes] = []
        self._cur_bytes = 0
        self._cur_count = 0
        self._closed = False

    def __enter__(self) -> "DatasetWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.abort()

    def _check_label(self, label: float) -> None:
        task = self.meta.task
        if not np.isfinite(label):
            raise DimensionError(f"non-finite label {label}")
        if task == "binary" and label not in (-1.0, 1.0):
            raise DimensionError(f"binary labels must be -1/+1, got {label}")
        if task == "multiclass" and (label != int(label) or not 0 <= label < self.meta.num_classes):
            raise DimensionError(f"class label {label} outside 0..{self.meta.num_classes - 1}")

    def _flush_block(self) -> None:
        if not self._cur_count:
            return
        payload = b"".join(self._cur)
        self._f.write(payload)
        self._entries.append(BlockEntry(len(self._entries), self._pos, len(payload), self._cur_count, zlib.crc32(payload)))
        self._pos += len(payload)
        self._cur, self._cur_bytes, self._cur_count = [], 0, 0

    def _append_encoded(self, rec: bytes) -> None:
        if self._cur_bytes + len(rec) > self.meta.block_size_bytes:
            self._flush_block()
        if len(rec) > self.meta.block_size_bytes:
            raise DatasetFormatError(f"tuple of {len(rec)} bytes exceeds block_size_bytes={self.meta.block_size_bytes}")
        self._cur.append(rec)
        self._cur_bytes += len(rec)
        self._cur_count += 1
        self.meta.m += 1

    def add(self, t: Tuple) -> None:
        d = self.meta.d
        self._check_label(t.label)
        if self.meta.encoding == "dense":
            if t.indices is not None:
                dense = np.zeros(d, dtype=np.float32)
                if len(t.indices) and int(np.max(t.indices)) >= d:
                    raise DimensionError(f"feature index {int(np.max(t.indices))} >= dimension {d}")
                dense[np.asarray(t.indices)] = t.values
            else:
                dense = np.asarray(t.values, dtype=np.float32)
                if dense.shape != (d,):
                    raise DimensionError(f"dense tuple has length {dense.shape}, dimension is {d}")
            rec = np.zeros(1, dtype=self._rec)
            rec["id"], rec["label"], rec["x"][0] = t.id, t.label, dense
            self._append_encoded(rec.tobytes())
        else:
            if t.indices is None:
                nz = np.flatnonzero(t.values)
                if len(t.values) != d:
                    raise DimensionError(f"dense tuple has length {len(t.values)}, dimension is {d}")
                t = Tuple(t.id, t.label, np.asarray(t.values)[nz], nz)
            idx = np.asarray(t.indices, dtype=np.int64)
            if len(idx) and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
                raise DimensionError(f"tuple {t.id}: sparse indices must be strictly increasing and non-negative")
            if len(idx) and idx[-1] >= d:
                raise DimensionError(f"tuple {t.id}: feature index {idx[-1]} >= dimension {d}")
            self._append_encoded(_encode_sparse(t))

    def add_batch(self, batch: TupleBatch) -> None:
        if self.meta.encoding != "dense" or batch.dense is None:
            for t in batch:
                self.add(t)
            return
        if batch.dense.shape[1] != self.meta.d:
            raise DimensionError(f"batch dimension {batch.dense.shape[1]} != {self.meta.d}")
        for lab in np.unique(batch.labels):
            self._check_label(float(lab))
        recs = np.zeros(len(batch), dtype=self._rec)
        recs["id"], recs["label"], recs["x"] = batch.ids, batch.labels, batch.dense
        raw = recs.tobytes()
        b, tb = self.meta.tuples_per_block, self._tb
        start = 0
        while start < len(batch):
            room = b - self._cur_count
            take = min(room, len(batch) - start)
            self._cur.append(raw[start * tb:(start + take) * tb])
            self._cur_bytes += take * tb
            self._cur_count += take
            self.meta.m += take
            start += take
            if self._cur_count == b:
                self._flush_block()

    def close(self) -> Path:
        if self._closed:
            return self.path
        try:
            self._flush_block()
            if self.meta.m == 0:
                raise DatasetFormatError("no tuples")
            index_offset = self._pos
            index_bytes = b"".join(_INDEX_ENTRY.pack(e.block_id, e.byte_offset, e.byte_length, e.tuple_count, e.crc32) for e in self._entries)
            self._f.write(index_bytes)
            self._f.write(_TRAILER.pack(zlib.crc32(index_bytes), END_MAGIC))
            self._f.seek(0)
            self._f.write(_pack_header(self.meta, len(self._entries), HEADER_SIZE, index_offset))
            self._f.close()
            self._closed = True
        except BaseException:
            self.abort()
            raise
        return self.path

    def abort(self) -> None:
        if not self._f.closed:
            self._f.close()
        self._closed = True
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


def _pack_header(meta: DatasetMeta, num_blocks: int, data_offset: int, index_offset: int) -> bytes:
    body = _HEADER.pack(
        MAGIC, meta.version, TASKS.index(meta.task), ENCODINGS.index(meta.encoding), 0,
        meta.num_classes, 0, meta.m, meta.d, meta.block_size_bytes, meta.tuples_per_block,
        num_blocks, data_offset, index_offset,
    )
    body += struct.pack("<I", zlib.crc32(body))
    return body.ljust(HEADER_SIZE, b"\x00")


class DatasetFile:
    """Read-only handle on a dataset file.

    Blocks are fetched with one positional read each, so a handle can be shared
    by concurrent reader threads.  ``bytes_read`` accumulates every byte pulled
    from the data region.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        self._lock = threading.Lock()
        self.bytes_read = 0
        try:
            self._load_header()
        except BaseException:
            os.close(self._fd)
            raise
        self._tuple_table: tuple[np.ndarray, np.ndarray] | None = None

    def _load_header(self) -> None:
        head = os.pread(self._fd, HEADER_SIZE, 0)
        if len(head) < HEADER_SIZE or head[:8] != MAGIC:
            raise DatasetFormatError(f"{self.path}: not a dataset file")
        fields = _HEADER.unpack_from(head)
        (crc,) = struct.unpack_from("<I", head, _HEADER.size)
        if zlib.crc32(head[:_HEADER.size]) != crc:
            raise IntegrityError(f"{self.path}: header checksum mismatch")
        _, version, task, enc, _, ncls, _, m, d, bsz, tpb, nblocks, data_off, index_off = fields
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported format version {version}")
        self.meta = DatasetMeta(m=m, d=d, task=TASKS[task], num_classes=ncls, encoding=ENCODINGS[enc],
                                block_size_bytes=bsz, tuples_per_block=tpb, version=version)
        self.meta.validate()
        raw = os.pread(self._fd, nblocks * _INDEX_ENTRY.size + _TRAILER.size, index_off)
        if len(raw) != nblocks * _INDEX_ENTRY.size + _TRAILER.size:
            raise DatasetFormatError(f"{self.path}: truncated block index")
        index_bytes = raw[: nblocks * _INDEX_ENTRY.size]
        icrc, end = _TRAILER.unpack_from(raw, len(index_bytes))
        if end != END_MAGIC or zlib.crc32(index_bytes) != icrc:
            raise IntegrityError(f"{self.path}: block index checksum mismatch")
        entries = [BlockEntry(*_INDEX_ENTRY.unpack_from(index_bytes, k * _INDEX_ENTRY.size)) for k in range(nblocks)]
        self.index = BlockIndex(entries)
        self.index.validate(m, data_off, index_off)
        self.data_offset, self.index_offset = data_off, index_off

    # -- context management -------------------------------------------------
    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> "DatasetFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    # -- properties ---------------------------------------------------------
    @property
    def m(self) -> int:
        return self.meta.m

    @property
    def d(self) -> int:
        return self.meta.d

    @property
    def N(self) -> int:
        return self.index.N

    @property
    def is_sparse(self) -> bool:
        return self.meta.encoding == "sparse"

    @property
    def data_bytes(self) -> int:
        return self.index_offset - self.data_offset

    def _count(self, n: int) -> None:
        with self._lock:
            self.bytes_read += n

    # -- reads --------------------------------------------------------------
    def read_raw_block(self, block_id: int, verify: bool = True) -> bytes:
        if not 0 <= block_id < self.N:
            raise IndexError(f"block id {block_id} out of range [0, {self.N})")
        e = self.index.entries[block_id]
        raw = os.pread(self._fd, e.byte_length, e.byte_offset)
        self._count(len(raw))
        if len(raw) != e.byte_length:
            raise DatasetFormatError(f"short read on block {block_id}")
        if verify and zlib.crc32(raw) != e.crc32:
            raise IntegrityError(f"block {block_id}: checksum mismatch")
        return raw

    def decode(self, raw: bytes, count: int) -> TupleBatch:
        if self.is_sparse:
            return _decode_sparse(raw, count, self.d)
        recs = np.frombuffer(raw, dtype=dense_record_dtype(self.d), count=count)
        return TupleBatch(recs["id"].astype(np.int64), recs["label"].copy(), self.d, dense=recs["x"].copy())

    def read_block(self, block_id: int, verify: bool = True) -> TupleBatch:
        """Tuples of one block, in stored order, via a single contiguous read."""
        raw = self.read_raw_block(block_id, verify)
        return self.decode(raw, self.index.entries[block_id].tuple_count)

    def iter_blocks(self, order: Iterable[int] | None = None) -> Iterator[TupleBatch]:
        for k in range(self.N) if order is None else order:
            yield self.read_block(int(k))

    def read_all(self) -> TupleBatch:
        return TupleBatch.concat(list(self.iter_blocks()), dim=self.d, sparse=self.is_sparse)

    def tuple_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Absolute byte offset and length of every stored tuple, in storage order."""
        if self._tuple_table is None:
            if not self.is_sparse:
                tb = dense_tuple_bytes(self.d)
                offs = np.concatenate([
                    e.byte_offset + tb * np.arange(e.tuple_count, dtype=np.int64) for e in self.index.entries
                ])
                lens = np.full(self.m, tb, dtype=np.int64)
            else:
                offs = np.empty(self.m, dtype=np.int64)
                lens = np.empty(self.m, dtype=np.int64)
                r = 0
                for e in self.index.entries:
                    raw = self.read_raw_block(e.block_id)
                    off = 0
                    for _ in range(e.tuple_count):
                        _, _, nnz = _SPARSE_HEAD.unpack_from(raw, off)
                        offs[r], lens[r] = e.byte_offset + off, sparse_tuple_bytes(nnz)
                        off += lens[r]
                        r += 1
            self._tuple_table = (offs, lens)
        return self._tuple_table

    def read_tuples_at(self, positions) -> TupleBatch:
        """Random tuple-level access: one positional read per requested tuple."""
        offs, lens = self.tuple_table()
        raws = []
        for p in np.asarray(positions, dtype=np.int64):
            raw = os.pread(self._fd, int(lens[p]), int(offs[p]))
            self._count(len(raw))
            raws.append(raw)
        return self.decode(b"".join(raws), len(raws))

    def read_raw_tuple(self, position: int) -> bytes:
        offs, lens = self.tuple_table()
        raw = os.pread(self._fd, int(lens[position]), int(offs[position]))
        self._count(len(raw))
        return raw

    def checksum(self) -> str:
        """CRC32 over the whole file, hex encoded; used to tag run manifests."""
        crc = 0
        with open(self.path, "rb") as f:
            while chunk := f.read(1 << 20):
                crc = zlib.crc32(chunk, crc)
        return f"{crc:08x}"

    def __repr__(self) -> str:
        return f"DatasetFile({str(self.path)!r}, m={self.m}, d={self.d}, N={self.N}, {self.meta.encoding}, {self.meta.task})"


def write_dataset(
    path: str | os.PathLike,
    batch: TupleBatch,
    task: str = "binary",
    num_classes: int = 2,
    encoding: str | None = None,
    block_size_bytes: int = DEFAULT_BLOCK_SIZE,
) -> DatasetFile:
    """Write a whole in-memory batch as a dataset and reopen it."""
    enc = encoding or ("sparse" if batch.is_sparse else "dense")
    with DatasetWriter(path, batch.dim, task, num_classes, enc, block_size_bytes) as w:
        w.add_batch(batch)
    return DatasetFile(path)


def write_like(path: str | os.PathLike, src: DatasetFile, batch: TupleBatch) -> DatasetFile:
    """Write ``batch`` with the same task, encoding and block budget as ``src``."""
    m = src.meta
    return write_dataset(path, batch, m.task, m.num_classes, m.encoding, m.block_size_bytes)
