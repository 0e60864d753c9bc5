"""Seeded synthetic datasets with controllable storage order."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from corgipile.dataset.format import DEFAULT_BLOCK_SIZE, DatasetFile, TupleBatch, write_dataset
from corgipile.errors import ConfigError
from corgipile.rng import Purpose, substream


@dataclass
class SyntheticSpec:
    """Isotropic Gaussian classes (or a noisy linear target for regression).

    ``order`` is ``"shuffled"``, ``"label_clustered"`` or ``"feature_ordered"``
    (the latter sorts by ``order_feature``).  For regression, ``means[0]`` is the
    true weight vector.
    """

    m: int
    d: int
    task: str = "binary"
    num_classes: int = 2
    means: list | np.ndarray | None = None
    noise_std: float = 1.0
    seed: int = 0
    order: str = "shuffled"
    order_feature: int = 0
    block_size_bytes: int = DEFAULT_BLOCK_SIZE
    separation: float = 1.0
    extra: dict = field(default_factory=dict)

    def resolved_means(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64).reshape(-1, self.d)
        return default_means(self.task, self.d, self.num_classes, self.separation, self.seed)

    def validate(self) -> None:
        if self.m < 1 or self.d < 1:
            raise ConfigError("m and d must be >= 1")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be > 0")
        if self.order not in ("shuffled", "label_clustered", "feature_ordered"):
            raise ConfigError(f"unknown order {self.order!r}")
        if self.order == "feature_ordered" and not 0 <= self.order_feature < self.d:
            raise ConfigError(f"order_feature {self.order_feature} outside [0, {self.d})")
        means = self.resolved_means()
        k = {"binary": 2, "multiclass": self.num_classes, "regression": 1}[self.task]
        if len(means) != k:
            raise ConfigError(f"{self.task} needs {k} mean vectors, got {len(means)}")
        if k > 1 and len({tuple(r) for r in means}) != k:
            raise ConfigError("class means must be distinct")


def default_means(task: str, d: int, num_classes: int = 2, separation: float = 1.0, seed: int = 0) -> np.ndarray:
    """Class means at distance ``separation`` from the origin.

    Binary: ``-s/sqrt(d) * 1`` and ``+s/sqrt(d) * 1``.  Multiclass: seeded random
    unit directions scaled by ``s``.  Regression: a seeded unit-norm weight vector.
    """
    if task == "binary":
        v = np.full(d, separation / np.sqrt(d))
        return np.stack([-v, v])
    rng = substream(seed, Purpose.SYNTHETIC, index=99)
    k = num_classes if task == "multiclass" else 1
    dirs = rng.standard_normal((k, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def _balanced_labels(task: str, m: int, num_classes: int) -> np.ndarray:
    if task == "binary":
        neg = m // 2
        return np.concatenate([np.full(neg, -1.0), np.full(m - neg, 1.0)])
    counts = np.full(num_classes, m // num_classes)
    counts[: m % num_classes] += 1
    return np.repeat(np.arange(num_classes, dtype=np.float64), counts)


def synthesize(spec: SyntheticSpec) -> TupleBatch:
    """In-memory tuples for ``spec``; ids equal the final storage positions."""
    spec.validate()
    rng = substream(spec.seed, Purpose.SYNTHETIC)
    means = spec.resolved_means()
    if spec.task == "regression":
        x = rng.standard_normal((spec.m, spec.d))
        y = x @ means[0] + spec.noise_std * rng.standard_normal(spec.m)
    else:
        y = _balanced_labels(spec.task, spec.m, spec.num_classes)
        cls = (y > 0).astype(int) if spec.task == "binary" else y.astype(int)
        x = means[cls] + spec.noise_std * rng.standard_normal((spec.m, spec.d))
    x = x.astype(np.float32)
    y = y.astype(np.float32)

    if spec.order == "shuffled":
        perm = rng.permutation(spec.m)
    elif spec.order == "label_clustered":
        perm = np.argsort(y, kind="stable")
    else:
        perm = np.argsort(x[:, spec.order_feature], kind="stable")
    x, y = x[perm], y[perm]
    return TupleBatch(np.arange(spec.m), y, spec.d, dense=x)


def generate_synthetic(spec: SyntheticSpec, path: str | os.PathLike) -> DatasetFile:
    batch = synthesize(spec)
    return write_dataset(path, batch, spec.task, spec.num_classes, "dense", spec.block_size_bytes)
