"""Whole-dataset reorderings: label/feature clustering and the offline full shuffle."""

from __future__ import annotations

import os
import shutil

import numpy as np

from corgipile.dataset.format import DatasetFile, DatasetWriter, write_like
from corgipile.rng import Purpose, substream


def order_by_label(ds: DatasetFile, out: str | os.PathLike) -> DatasetFile:
    """Stable sort by label; tuple ids keep their original values."""
    batch = ds.read_all()
    return write_like(out, ds, batch.take(np.argsort(batch.labels, kind="stable")))


def order_by_feature(ds: DatasetFile, j: int, out: str | os.PathLike) -> DatasetFile:
    """Stable sort by the value of feature ``j`` (missing sparse entries count as 0)."""
    if not 0 <= j < ds.d:
        raise IndexError(f"feature {j} outside [0, {ds.d})")
    batch = ds.read_all()
    return write_like(out, ds, batch.take(np.argsort(batch.feature_column(j), kind="stable")))


def shuffle_table(m: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of ``range(m)`` drawn from the full-shuffle substream."""
    table = np.arange(m)
    rng = substream(seed, Purpose.FULL_SHUFFLE)
    draws = rng.random(max(m - 1, 0))
    for i in range(m - 1, 0, -1):
        j = min(int(draws[m - 1 - i] * (i + 1)), i)
        table[i], table[j] = table[j], table[i]
    return table


def full_shuffle(ds: DatasetFile, seed: int, out: str | os.PathLike) -> DatasetFile:
    """Materialize a uniformly random permutation of ``ds`` at ``out``.

    Builds the tuple offset table, Fisher-Yates shuffles it, then copies tuples
    one random read at a time into a new file with the same block budget.
    """
    free = shutil.disk_usage(os.path.dirname(os.path.abspath(out)) or ".").free
    if free < ds.data_bytes * 1.1:
        raise OSError(f"insufficient disk space for a shuffled copy: need ~{ds.data_bytes} bytes, have {free}")
    ds.tuple_table()
    table = shuffle_table(ds.m, seed)
    m = ds.meta
    with DatasetWriter(out, m.d, m.task, m.num_classes, m.encoding, m.block_size_bytes) as w:
        chunk = 4096
        for s in range(0, len(table), chunk):
            for t in ds.read_tuples_at(table[s:s + chunk]):
                w.add(t)
    return DatasetFile(out)
