"""Epoch loops, evaluation and the multi-epoch trainer."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import sparse

from corgipile.dataset.format import DatasetFile, TupleBatch
from corgipile.errors import ConfigError, DimensionError, DivergenceError
from corgipile.sgd import kernels
from corgipile.sgd.model import KIND_CODE, Model
from corgipile.sgd.schedule import LrSchedule
from corgipile.shuffle import ShuffleConfig, StreamFactory, TupleStream

HISTORY_COLUMNS = ("epoch", "loss", "train_acc", "test_acc", "seconds", "bytes_read")


@dataclass
class EpochStats:
    """Metrics for one epoch.

    ``loss`` is the mean data loss of the emitted tuples, each measured just
    before the update it drives.  ``train_acc``/``test_acc`` hold accuracy for
    classifiers and R^2 for regression (``nan`` when not evaluated).
    """

    epoch: int
    loss: float
    train_acc: float = float("nan")
    test_acc: float = float("nan")
    seconds: float = 0.0
    bytes_read: int = 0
    tuples_seen: int = 0
    lr: float = 0.0

    def row(self) -> list:
        return [self.epoch, repr(self.loss), repr(self.train_acc), repr(self.test_acc), f"{self.seconds:.6f}", self.bytes_read]


@dataclass
class Metrics:
    count: int
    loss: float
    accuracy: float | None = None
    r2: float | None = None

    @property
    def score(self) -> float:
        """Accuracy for classifiers, R^2 for regression."""
        return self.r2 if self.accuracy is None else self.accuracy


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    iterates: list[np.ndarray] = field(default_factory=list)
    info: dict = field(default_factory=dict)


def _check_dims(model: Model, d: int) -> None:
    if model.d != d:
        raise DimensionError(f"model has {model.d} features, data has {d}")


def _chunks(stream: TupleStream | Iterable[TupleBatch]):
    return stream.chunks() if isinstance(stream, TupleStream) else iter(stream)


def sgd_epoch(model: Model, stream: TupleStream | Iterable[TupleBatch], eta: float, epoch: int = 0) -> tuple[Model, EpochStats]:
    """One per-tuple SGD pass in emission order.  ``model`` is updated in place and returned."""
    if eta < 0:
        raise ConfigError("learning rate must be >= 0")
    code = KIND_CODE[model.kind]
    gbuf = np.zeros(model.d)
    total, seen = 0.0, 0
    t0 = time.monotonic()
    for chunk in _chunks(stream):
        _check_dims(model, chunk.dim)
        indptr, indices, values = chunk.csr()
        losses = np.empty(len(chunk))
        bad = kernels.sgd_run(code, model.W, model.bias, model.lam, eta, indptr, indices, values, chunk.labels, 0, len(chunk), losses, gbuf)
        if bad >= 0:
            raise DivergenceError(
                f"non-finite loss at step {seen + bad} of epoch {epoch} (tuple id {int(chunk.ids[bad])}); "
                f"try a smaller learning rate than {eta}",
                epoch, seen + bad,
            )
        total += float(losses.sum())
        seen += len(chunk)
    stats = _stats(stream, epoch, total, seen, time.monotonic() - t0, eta)
    return model, stats


def minibatch_epoch(
    model: Model, stream: TupleStream | Iterable[TupleBatch], eta: float, batch_size: int, epoch: int = 0
) -> tuple[Model, EpochStats]:
    """Average gradients over ``batch_size`` consecutive emissions, then step.

    Batches may span stream chunks; the final short batch is averaged over its
    actual size.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if eta < 0:
        raise ConfigError("learning rate must be >= 0")
    code = KIND_CODE[model.kind]
    acc = kernels.Accumulator(model.K, model.d)
    total, seen = 0.0, 0
    t0 = time.monotonic()
    for chunk in _chunks(stream):
        _check_dims(model, chunk.dim)
        indptr, indices, values = chunk.csr()
        losses = np.empty(len(chunk))
        bad = kernels.minibatch_run(
            code, model.W, model.bias, model.lam, eta, batch_size,
            indptr, indices, values, chunk.labels, 0, len(chunk), losses, *acc.buffers(),
        )
        if bad >= 0:
            raise DivergenceError(f"non-finite loss at step {seen + bad} of epoch {epoch}", epoch, seen + bad)
        total += float(losses.sum())
        seen += len(chunk)
    kernels.apply_update(model.W, model.bias, model.lam, eta, *acc.buffers())
    stats = _stats(stream, epoch, total, seen, time.monotonic() - t0, eta)
    return model, stats


def _stats(stream, epoch: int, total: float, seen: int, seconds: float, eta: float) -> EpochStats:
    nbytes = stream.bytes_read if isinstance(stream, TupleStream) else 0
    loss = total / seen if seen else float("nan")
    return EpochStats(epoch, loss, seconds=seconds, bytes_read=nbytes, tuples_seen=seen, lr=eta)


def margins(model: Model, batch: TupleBatch) -> np.ndarray:
    """``(k, K)`` matrix of margins for every tuple in ``batch``."""
    _check_dims(model, batch.dim)
    if batch.is_sparse:
        X = sparse.csr_matrix((batch.values, batch.indices, batch.indptr), shape=(len(batch), batch.dim))
        return np.asarray(X @ model.W.T) + model.bias
    return batch.dense.astype(np.float64) @ model.W.T + model.bias


def predict(model: Model, batch: TupleBatch) -> np.ndarray:
    """Predicted labels.  A margin of exactly 0 predicts +1; softmax ties go to the lowest class."""
    Z = margins(model, batch)
    if model.kind == "squared":
        return Z[:, 0]
    if model.kind == "softmax":
        return np.argmax(Z, axis=1).astype(np.float64)
    return np.where(Z[:, 0] >= 0, 1.0, -1.0)


def _losses(model: Model, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.kind == "logistic":
        return np.logaddexp(0.0, -np.where(y > 0, 1.0, -1.0) * Z[:, 0])
    if model.kind == "hinge":
        return np.maximum(0.0, 1.0 - np.where(y > 0, 1.0, -1.0) * Z[:, 0])
    if model.kind == "squared":
        return 0.5 * (Z[:, 0] - y) ** 2
    mx = Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(Z - mx).sum(axis=1)) + mx[:, 0]
    return lse - Z[np.arange(len(y)), y.astype(np.int64)]


def evaluate(model: Model, data: DatasetFile | TupleBatch | Iterable[TupleBatch]) -> Metrics:
    """Accuracy (classifiers) or R^2 (regression) plus the mean data loss."""
    if isinstance(data, DatasetFile):
        batches = data.iter_blocks()
    elif isinstance(data, TupleBatch):
        batches = [data]
    else:
        batches = data
    count, loss_sum, correct = 0, 0.0, 0
    ys, preds = [], []
    for batch in batches:
        y = batch.labels.astype(np.float64)
        Z = margins(model, batch)
        loss_sum += float(_losses(model, Z, y).sum())
        count += len(batch)
        if model.kind == "squared":
            ys.append(y)
            preds.append(Z[:, 0])
        elif model.kind == "softmax":
            correct += int(np.sum(np.argmax(Z, axis=1) == y.astype(np.int64)))
        else:
            correct += int(np.sum(np.where(Z[:, 0] >= 0, 1.0, -1.0) == np.where(y > 0, 1.0, -1.0)))
    if count == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    loss = loss_sum / count
    if model.kind == "squared":
        y = np.concatenate(ys)
        p = np.concatenate(preds)
        ss_res = float(np.sum((y - p) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else float("-inf"))
        return Metrics(count, loss, r2=r2)
    return Metrics(count, loss, accuracy=correct / count)


def train(
    ds: DatasetFile,
    config: ShuffleConfig,
    model: Model,
    schedule: LrSchedule,
    epochs: int,
    batch_size: int = 1,
    eval_ds: DatasetFile | None = None,
    evaluate_train: bool = True,
    keep_iterates: bool = False,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Run ``epochs`` epochs, building a fresh stream for each one.

    ``model`` is the initial point and is not modified.  With
    ``keep_iterates`` the parameters at the start of every epoch are kept
    (``x_0 .. x_{S-1}``) plus the final model, for weighted averaging.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    _check_dims(model, ds.d)
    model = model.copy()
    factory = StreamFactory(ds, config)
    history: list[EpochStats] = []
    iterates: list[np.ndarray] = []
    try:
        for s in range(epochs):
            if keep_iterates:
                iterates.append(model.params())
            stream = factory(s)
            eta = schedule(s)
            if batch_size == 1:
                _, stats = sgd_epoch(model, stream, eta, s)
            else:
                _, stats = minibatch_epoch(model, stream, eta, batch_size, s)
            if evaluate_train:
                stats.train_acc = evaluate(model, ds).score
            if eval_ds is not None:
                stats.test_acc = evaluate(model, eval_ds).score
            history.append(stats)
            if on_epoch is not None:
                on_epoch(stats)
    finally:
        factory.close()
    if keep_iterates:
        iterates.append(model.params())
    info = {}
    if factory.copy is not None:
        info["shuffle_once_copy_seconds"] = factory.copy.seconds
        info["shuffle_once_copy_bytes"] = factory.copy.bytes
    return TrainResult(model, history, iterates, info)


def write_history(history: list[EpochStats], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_COLUMNS)
        for st in history:
            w.writerow(st.row())


def read_history(path: str | os.PathLike) -> list[EpochStats]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames[:len(HISTORY_COLUMNS)]) != HISTORY_COLUMNS:
            raise ValueError(f"{path}: expected history columns {','.join(HISTORY_COLUMNS)}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                out.append(EpochStats(
                    int(row["epoch"]), float(row["loss"]), float(row["train_acc"]), float(row["test_acc"]),
                    float(row["seconds"]), int(row["bytes_read"]),
                ))
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}:{i}: malformed history row ({e})") from None
    return out


def stats_dict(st: EpochStats) -> dict:
    d = asdict(st)
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
