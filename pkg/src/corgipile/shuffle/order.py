"""Positional and label distribution of an emitted tuple sequence."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from corgipile.shuffle.stream import TupleStream


@dataclass
class OrderProfile:
    """What a stream emitted, and how its labels spread over fixed windows.

    ``window_label_counts`` has one row per consecutive window of ``window``
    emissions (the last window may be short) and one column per entry of
    ``classes``.
    """

    positions: np.ndarray
    labels: np.ndarray
    window: int
    classes: np.ndarray
    window_label_counts: np.ndarray
    reference_fraction: float
    mean_abs_dev: float
    spearman: float
    strategy: str = ""
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def positive_fraction(self) -> np.ndarray:
        """Per-window fraction of the largest class label (``+1`` for binary data)."""
        sizes = self.window_label_counts.sum(axis=1)
        return self.window_label_counts[:, -1] / np.maximum(sizes, 1)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "epoch": self.epoch,
            "emitted": int(len(self.positions)),
            "window": self.window,
            "windows": int(len(self.window_label_counts)),
            "classes": [float(c) for c in self.classes],
            "reference_fraction": self.reference_fraction,
            "mean_abs_dev": self.mean_abs_dev,
            "spearman": self.spearman,
            **self.extra,
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["position", "id", "label"])
            for i, (tid, lab) in enumerate(zip(self.positions.tolist(), self.labels.tolist())):
                w.writerow([i, tid, repr(float(lab))])

    def write_summary(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def profile_sequence(
    ids,
    labels,
    window: int = 20,
    reference_fraction: float | None = None,
    classes=None,
    strategy: str = "",
    epoch: int = 0,
) -> OrderProfile:
    """Build an :class:`OrderProfile` from raw emitted ids and labels.

    ``mean_abs_dev`` is the mean over windows of
    ``|positive_fraction - reference_fraction|``; the reference defaults to the
    positive fraction of the whole sequence.  ``spearman`` is the rank
    correlation between emission position and tuple id.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    cls = np.unique(labels) if classes is None else np.asarray(classes, dtype=np.float64)
    k = len(ids)
    nwin = -(-k // window)
    counts = np.zeros((nwin, len(cls)), dtype=np.int64)
    if k:
        win = np.arange(k) // window
        col = np.searchsorted(cls, labels)
        np.add.at(counts, (win, col), 1)
    if reference_fraction is None:
        reference_fraction = float(np.mean(labels == cls[-1])) if k and len(cls) else 0.0
    sizes = counts.sum(axis=1)
    frac = counts[:, -1] / np.maximum(sizes, 1) if len(cls) else np.zeros(nwin)
    mad = float(np.mean(np.abs(frac - reference_fraction))) if nwin else 0.0
    if k >= 2 and np.ptp(ids) > 0:
        rho = float(stats.spearmanr(np.arange(k), ids).statistic)
    else:
        rho = float("nan")
    return OrderProfile(ids, labels, window, cls, counts, float(reference_fraction), mad, rho, strategy, epoch)


def analyze_order(stream: TupleStream, window: int = 20, reference_fraction: float | None = None, classes=None) -> OrderProfile:
    """Profile one epoch of ``stream``, draining it first if it has not been consumed."""
    if not stream._consumed:
        stream.drain()
    prof = profile_sequence(stream.psi, stream.labels, window, reference_fraction, classes, stream.name, stream.epoch)
    prof.extra = {k: v for k, v in stream.info.items() if isinstance(v, (int, float, str, bool))}
    return prof


def binomial_mad_reference(window: int, p: float) -> float:
    """Exact ``E|X/window - p|`` for ``X ~ Binomial(window, p)``."""
    x = np.arange(window + 1)
    return float(np.sum(stats.binom.pmf(x, window, p) * np.abs(x / window - p)))


def hypergeom_mad_reference(m: int, positives: int, window: int, p: float | None = None) -> float:
    """Exact ``E|X/window - p|`` for a window drawn without replacement from ``m`` tuples."""
    p = positives / m if p is None else p
    x = np.arange(window + 1)
    return float(np.sum(stats.hypergeom.pmf(x, m, positives, window) * np.abs(x / window - p)))
