"""LIBSVM text ingestion.

Each non-blank line is ``<label> <idx>:<val> ...`` with 1-based, increasing
feature indices.  Lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterator

import numpy as np

from corgipile.dataset.format import DEFAULT_BLOCK_SIZE, DatasetFile, DatasetWriter, Tuple
from corgipile.errors import DatasetFormatError, DimensionError, ParseError


def parse_line(line: str, line_no: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Return ``(label, 0-based indices, values)`` for one LIBSVM line."""
    parts = line.split()
    try:
        label = float(parts[0])
    except ValueError:
        raise ParseError(line_no, f"bad label {parts[0]!r}") from None
    idx = np.empty(len(parts) - 1, dtype=np.int64)
    vals = np.empty(len(parts) - 1, dtype=np.float32)
    for k, tok in enumerate(parts[1:]):
        key, sep, val = tok.partition(":")
        if not sep:
            raise ParseError(line_no, f"expected <index>:<value>, got {tok!r}")
        try:
            idx[k] = int(key) - 1
            vals[k] = float(val)
        except ValueError:
            raise ParseError(line_no, f"bad feature {tok!r}") from None
        if idx[k] < 0:
            raise ParseError(line_no, f"LIBSVM indices are 1-based, got {key}")
    if len(idx) > 1 and np.any(np.diff(idx) <= 0):
        raise ParseError(line_no, "feature indices must be strictly increasing")
    return label, idx, vals


def iter_libsvm(path: str | os.PathLike) -> Iterator[tuple[int, float, np.ndarray, np.ndarray]]:
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield (line_no, *parse_line(s, line_no))


def ingest_libsvm(
    path: str | os.PathLike,
    out: str | os.PathLike,
    dim: int | None = None,
    task: str = "binary",
    encoding: str = "sparse",
    block_size_bytes: int = DEFAULT_BLOCK_SIZE,
    num_classes: int | None = None,
) -> DatasetFile:
    """Convert a LIBSVM file into a block-indexed dataset at ``out``.

    Tuple ids follow line order.  Binary files labelled 0/1 are mapped to -1/+1;
    multiclass labels are mapped to 0..C-1 in sorted order.  When ``dim`` is not
    given it is the largest index seen (one extra pass over the file).
    """
    path = Path(path)
    labels_seen: set[float] = set()
    max_idx = -1
    count = 0
    for line_no, label, idx, _ in iter_libsvm(path):
        labels_seen.add(label)
        if len(idx):
            max_idx = max(max_idx, int(idx[-1]))
            if dim is not None and idx[-1] >= dim:
                raise DimensionError(f"line {line_no}: feature index {idx[-1] + 1} exceeds dimension {dim}")
        count += 1
    if count == 0:
        raise DatasetFormatError("no tuples")
    d = dim if dim is not None else max(max_idx + 1, 1)

    if task == "binary":
        if labels_seen <= {0.0, 1.0}:
            mapping = {0.0: -1.0, 1.0: 1.0}
        elif labels_seen <= {-1.0, 1.0}:
            mapping = {-1.0: -1.0, 1.0: 1.0}
        else:
            raise DatasetFormatError(f"binary task expects labels in {{-1,+1}} or {{0,1}}, got {sorted(labels_seen)}")
    elif task == "multiclass":
        classes = sorted(labels_seen)
        mapping = {c: float(k) for k, c in enumerate(classes)}
        num_classes = max(num_classes or 0, len(classes))
    else:
        mapping = None

    with DatasetWriter(out, d, task, num_classes or 2, encoding, block_size_bytes) as w:
        for tid, (_, label, idx, vals) in enumerate(iter_libsvm(path)):
            lab = mapping[label] if mapping is not None else label
            w.add(Tuple(tid, lab, vals, idx))
    return DatasetFile(out)
