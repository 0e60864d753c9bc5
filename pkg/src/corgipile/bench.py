"""I/O access-pattern and per-epoch overhead benchmarks."""

from __future__ import annotations

import contextlib
import csv
import fcntl
import os
import statistics
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from corgipile.dataset.format import MB, DatasetFile, DatasetWriter, TupleBatch, dense_tuple_bytes
from corgipile.errors import CorgiPileError, IntegrityError
from corgipile.rng import Purpose, substream
from corgipile.sgd.model import Model
from corgipile.sgd.train import minibatch_epoch, sgd_epoch
from corgipile.shuffle import ShuffleConfig, StreamFactory

IO_MODES = ("sequential", "random_block", "random_tuple")
WARM = "warm-cache"
COLD = "fadvise-dropped"


class BenchBusyError(CorgiPileError):
    """Another benchmark holds the lock file."""


@contextlib.contextmanager
def bench_lock(path: str | os.PathLike | None = None):
    """Exclusive, non-blocking lock so two benchmarks never overlap."""
    path = Path(path or os.path.join(tempfile.gettempdir(), "corgipile-bench.lock"))
    fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise BenchBusyError(f"another benchmark is running (lock {path})") from None
        yield path
    finally:
        os.close(fd)


def fadvise_drop(path: str | os.PathLike) -> bool:
    """Ask the kernel to evict ``path`` from the page cache; True if the call succeeded."""
    if not hasattr(os, "posix_fadvise"):
        return False
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return False
    try:
        os.fsync(fd)
        os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
        return True
    except OSError:
        return False
    finally:
        os.close(fd)


def no_drop(path: str | os.PathLike) -> bool:
    return False


@dataclass
class IoBenchResult:
    """Throughput of one access pattern over several repetitions (MB = 2^20 bytes)."""

    mode: str
    block_size: int
    regime: str
    bytes_per_rep: list[int]
    seconds: list[float]
    mbps: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.mbps:
            self.mbps = [b / MB / s if s > 0 else float("inf") for b, s in zip(self.bytes_per_rep, self.seconds)]

    @property
    def min(self) -> float:
        return min(self.mbps)

    @property
    def median(self) -> float:
        return statistics.median(self.mbps)

    @property
    def max(self) -> float:
        return max(self.mbps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(min_mbps=self.min, median_mbps=self.median, max_mbps=self.max)
        return d


def io_scan_bench(
    ds: DatasetFile,
    mode: str,
    repetitions: int = 3,
    seed: int = 0,
    drop_cache: Callable[[str | os.PathLike], bool] = fadvise_drop,
    max_tuple_reads: int = 20_000,
) -> IoBenchResult:
    """Time raw reads in one access pattern.

    ``sequential`` reads every block in storage order, ``random_block`` reads
    every block in a random order, ``random_tuple`` reads up to
    ``max_tuple_reads`` tuples at random positions, one read each.  The cache
    hook runs before every repetition; if it ever fails the result is
    labelled warm-cache.  The dataset checksum is compared before and after.
    """
    if mode not in IO_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(IO_MODES)}")
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    if ds.m == 0 or ds.data_bytes == 0:
        raise ValueError("cannot benchmark an empty dataset")
    before = ds.checksum()
    if mode == "random_tuple":
        ds.tuple_table()
    cold = True
    nbytes, secs = [], []
    for r in range(repetitions):
        cold = drop_cache(ds.path) and cold
        rng = substream(seed, Purpose.BENCH, index=r)
        t0 = time.monotonic()
        got = 0
        if mode == "sequential":
            for k in range(ds.N):
                got += len(ds.read_raw_block(k, verify=False))
        elif mode == "random_block":
            for k in rng.permutation(ds.N):
                got += len(ds.read_raw_block(int(k), verify=False))
        else:
            for p in rng.integers(0, ds.m, size=min(max_tuple_reads, ds.m)):
                got += len(ds.read_raw_tuple(int(p)))
        secs.append(time.monotonic() - t0)
        nbytes.append(got)
    if ds.checksum() != before:
        raise IntegrityError(f"{ds.path} changed during the benchmark")
    return IoBenchResult(mode, ds.meta.block_size_bytes, COLD if cold else WARM, nbytes, secs)


def make_io_dataset(path: str | os.PathLike, total_bytes: int, block_size: int, tuple_bytes: int = 1024, seed: int = 0) -> DatasetFile:
    """Dense random dataset of about ``total_bytes`` for I/O tests."""
    d = max(1, (tuple_bytes - dense_tuple_bytes(0)) // 4)
    m = max(1, total_bytes // dense_tuple_bytes(d))
    rng = substream(seed, Purpose.BENCH, index=1_000_000)
    with DatasetWriter(path, d, "binary", 2, "dense", block_size) as w:
        step = max(1, (8 * MB) // dense_tuple_bytes(d))
        for s in range(0, m, step):
            k = min(step, m - s)
            x = rng.standard_normal((k, d), dtype=np.float32)
            y = np.where(rng.random(k) < 0.5, -1.0, 1.0).astype(np.float32)
            w.add_batch(TupleBatch(np.arange(s, s + k), y, d, dense=x))
    return DatasetFile(path)


def block_size_sweep(
    workdir: str | os.PathLike,
    total_bytes: int,
    sizes: Sequence[int] = (2 * MB, 10 * MB, 50 * MB),
    repetitions: int = 3,
    seed: int = 0,
    drop_cache: Callable[[str | os.PathLike], bool] = fadvise_drop,
    keep_files: bool = False,
) -> list[IoBenchResult]:
    """Random-block throughput for each block size, each on its own copy of the same data."""
    out = []
    for size in sizes:
        path = Path(workdir) / f"io-{size}.ds"
        ds = make_io_dataset(path, total_bytes, size, seed=seed)
        try:
            out.append(io_scan_bench(ds, "random_block", repetitions, seed, drop_cache))
        finally:
            ds.close()
            if not keep_files:
                path.unlink(missing_ok=True)
    return out


def write_io_csv(results: Iterable[IoBenchResult], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "block_size", "regime", "repetition", "bytes", "seconds", "mbps"])
        for r in results:
            for i, (b, s, v) in enumerate(zip(r.bytes_per_rep, r.seconds, r.mbps)):
                w.writerow([r.mode, r.block_size, r.regime, i, b, f"{s:.6f}", f"{v:.3f}"])


# ---------------------------------------------------------------- epoch overhead


class ThrottledDataset:
    """Wraps a dataset so every block read costs extra wall time.

    The delay is ``latency + bytes * per_byte`` seconds, spent in ``sleep`` so
    it overlaps with compute on another thread, as a slow device would.
    """

    def __init__(self, ds: DatasetFile, latency: float = 0.0, per_byte: float = 0.0):
        self._ds = ds
        self.latency = latency
        self.per_byte = per_byte

    def read_block(self, k: int, verify: bool = True):
        batch = self._ds.read_block(k, verify)
        time.sleep(self.latency + self.per_byte * self._ds.index.entries[k].byte_length)
        return batch

    def __getattr__(self, name):
        return getattr(self._ds, name)


def with_compute_cost(chunks: Iterable[TupleBatch], per_tuple: float) -> Iterable[TupleBatch]:
    """Pass chunks through, sleeping ``per_tuple`` seconds per tuple after each one is consumed."""
    for chunk in chunks:
        yield chunk
        if per_tuple > 0:
            time.sleep(per_tuple * len(chunk))


@dataclass
class EpochOverheadRow:
    strategy: str
    label: str
    epochs: list[float]
    mean: float
    std: float
    ratio: float | None


def epoch_overhead_bench(
    ds: DatasetFile,
    configs: Sequence[ShuffleConfig],
    model: Model,
    epochs: int = 3,
    eta: float = 0.01,
    batch_size: int = 1,
    warmup: int = 1,
    compute_per_tuple: float = 0.0,
) -> list[EpochOverheadRow]:
    """Mean/std per-epoch wall time per strategy, with the warm-up epochs excluded.

    ``ratio`` is relative to the ``no_shuffle`` row when one is present.  The
    timed span covers stream production plus SGD (and the optional simulated
    per-tuple compute).  The dataset checksum is compared before and after.
    """
    if epochs < 1:
        raise ValueError("need at least one timed epoch")
    before = ds.checksum()
    rows = []
    for cfg in configs:
        factory = StreamFactory(ds, cfg)
        m = model.copy()
        times = []
        try:
            for s in range(warmup + epochs):
                stream = factory(s)
                t0 = time.monotonic()
                chunks = with_compute_cost(stream.chunks(), compute_per_tuple)
                if batch_size == 1:
                    sgd_epoch(m, chunks, eta, s)
                else:
                    minibatch_epoch(m, chunks, eta, batch_size, s)
                if s >= warmup:
                    times.append(time.monotonic() - t0)
        finally:
            factory.close()
        label = cfg.strategy + ("+double_buffer" if cfg.double_buffer else "")
        std = statistics.stdev(times) if len(times) > 1 else 0.0
        rows.append(EpochOverheadRow(cfg.strategy, label, times, statistics.fmean(times), std, None))
    base = next((r.mean for r in rows if r.label == "no_shuffle"), None)
    for r in rows:
        r.ratio = r.mean / base if base else None
    if ds.checksum() != before:
        raise IntegrityError(f"{ds.path} changed during the benchmark")
    return rows


def write_epoch_csv(rows: Iterable[EpochOverheadRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "repetition", "seconds", "mean", "std", "ratio_vs_no_shuffle"])
        for r in rows:
            for i, s in enumerate(r.epochs):
                w.writerow([r.label, i, f"{s:.6f}", f"{r.mean:.6f}", f"{r.std:.6f}", "" if r.ratio is None else f"{r.ratio:.4f}"])
