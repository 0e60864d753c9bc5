"""Linear models, their losses and a plain NumPy reference gradient."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from corgipile.dataset.format import Tuple
from corgipile.errors import ConfigError, DimensionError, NumericError
from corgipile.rng import Purpose, substream

KINDS = ("logistic", "hinge", "squared", "softmax")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}
ALIASES = {"lr": "logistic", "svm": "hinge", "linreg": "squared", "linear": "squared", "softmax": "softmax"}
MODEL_FORMAT_VERSION = 1


def resolve_kind(name: str) -> str:
    kind = ALIASES.get(name, name)
    if kind not in KINDS:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(KINDS)} or {', '.join(ALIASES)}")
    return kind


@dataclass
class Model:
    """Linear model with weights stored as a ``(K, d)`` float64 matrix.

    ``K`` is 1 for logistic, hinge and squared loss and ``C`` for softmax.
    ``lam`` is the L2 strength; the bias is not regularized.
    """

    kind: str
    W: np.ndarray
    bias: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        self.kind = resolve_kind(self.kind)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.W.ndim != 2 or self.bias.shape != (self.W.shape[0],):
            raise DimensionError(f"weights {self.W.shape} and bias {self.bias.shape} do not match")
        if self.kind != "softmax" and self.W.shape[0] != 1:
            raise DimensionError(f"{self.kind} model has a single weight row, got {self.W.shape[0]}")
        if self.lam < 0:
            raise ConfigError("L2 strength must be >= 0")

    @classmethod
    def zeros(cls, kind: str, d: int, num_classes: int = 0, lam: float = 0.0) -> "Model":
        kind = resolve_kind(kind)
        K = 1
        if kind == "softmax":
            if num_classes < 2:
                raise ConfigError("softmax needs num_classes >= 2")
            K = num_classes
        return cls(kind, np.zeros((K, d)), np.zeros(K), lam)

    @classmethod
    def gaussian(cls, kind: str, d: int, num_classes: int = 0, lam: float = 0.0, seed: int = 0, std: float = 0.01) -> "Model":
        m = cls.zeros(kind, d, num_classes, lam)
        m.W[:] = substream(seed, Purpose.INIT).normal(0.0, std, size=m.W.shape)
        return m

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Weight vector (length ``d``) or, for softmax, the ``C x d`` matrix."""
        return self.W if self.kind == "softmax" else self.W[0]

    def copy(self) -> "Model":
        return Model(self.kind, self.W.copy(), self.bias.copy(), self.lam)

    def params(self) -> np.ndarray:
        """All parameters flattened (weights then bias); used for averaging and comparison."""
        return np.concatenate([self.W.ravel(), self.bias])

    def with_params(self, flat: np.ndarray) -> "Model":
        k, d = self.W.shape
        flat = np.asarray(flat, dtype=np.float64)
        return Model(self.kind, flat[:k * d].reshape(k, d), flat[k * d:], self.lam)

    def bits_equal(self, other: "Model") -> bool:
        return (
            self.kind == other.kind
            and self.W.shape == other.W.shape
            and self.W.tobytes() == other.W.tobytes()
            and self.bias.tobytes() == other.bias.tobytes()
        )

    def to_dict(self) -> dict:
        # repr of a Python float round-trips exactly, so JSON keeps the bit pattern
        return {
            "format": "corgipile-model",
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "lam": self.lam,
            "shape": list(self.W.shape),
            "weights": [float(v) for v in self.W.ravel()],
            "bias": [float(v) for v in self.bias],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Model":
        if obj.get("format") != "corgipile-model":
            raise ValueError("not a serialized model")
        if obj.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')}")
        shape = tuple(obj["shape"])
        return cls(obj["kind"], np.array(obj["weights"], dtype=np.float64).reshape(shape), np.array(obj["bias"]), obj["lam"])

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Model":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _as_dense(t: Tuple, d: int) -> np.ndarray:
    x = np.zeros(d, dtype=np.float64)
    if t.indices is None:
        if len(t.values) != d:
            raise DimensionError(f"tuple has {len(t.values)} features, model has {d}")
        x[:] = t.values
    else:
        idx = np.asarray(t.indices)
        if len(idx) and (idx.max() >= d or idx.min() < 0):
            raise DimensionError(f"feature index outside [0, {d})")
        x[idx] = t.values
    return x


def loss_and_coef(kind: str, z: np.ndarray, y: float) -> tuple[float, np.ndarray]:
    """Loss and ``dloss/dz`` for margins ``z`` (length K) and label ``y``."""
    if kind == "logistic":
        yy = 1.0 if y > 0 else -1.0
        loss = float(np.logaddexp(0.0, -yy * z[0]))
        p = 0.5 * (1.0 + np.tanh(0.5 * z[0]))
        return loss, np.array([p - (1.0 if y > 0 else 0.0)])
    if kind == "hinge":
        yy = 1.0 if y > 0 else -1.0
        margin = yy * z[0]
        if margin < 1.0:
            return float(1.0 - margin), np.array([-yy])
        return 0.0, np.array([0.0])
    if kind == "squared":
        r = z[0] - y
        return float(0.5 * r * r), np.array([r])
    c = int(y)
    if not 0 <= c < len(z):
        raise DimensionError(f"class label {y} outside 0..{len(z) - 1}")
    mx = z.max()
    e = np.exp(z - mx)
    s = e.sum()
    onehot = np.zeros(len(z))
    onehot[c] = 1.0
    return float(np.log(s) + mx - z[c]), e / s - onehot


def gradient(model: Model, t: Tuple) -> tuple[np.ndarray, np.ndarray, float]:
    """Reference per-tuple gradient ``(grad_W, grad_bias, loss)``.

    ``grad_W`` has the shape of :attr:`Model.weights`; it includes the L2 term
    ``lam * w`` and the loss includes ``lam/2 * ||w||^2``.
    """
    x = _as_dense(t, model.d)
    if not (np.all(np.isfinite(x)) and np.isfinite(t.label)):
        raise NumericError(f"non-finite feature or label in tuple {t.id}")
    if not (np.all(np.isfinite(model.W)) and np.all(np.isfinite(model.bias))):
        raise NumericError("model has non-finite entries")
    z = model.W @ x + model.bias
    loss, c = loss_and_coef(model.kind, z, t.label)
    gW = np.outer(c, x) + model.lam * model.W
    loss += 0.5 * model.lam * float(np.sum(model.W * model.W))
    if model.kind != "softmax":
        gW = gW[0]
    return gW, c.copy(), loss


def objective(model: Model, t: Tuple) -> float:
    """Per-tuple objective matching :func:`gradient` (data loss plus L2 term)."""
    x = _as_dense(t, model.d)
    z = model.W @ x + model.bias
    loss, _ = loss_and_coef(model.kind, z, t.label)
    return loss + 0.5 * model.lam * float(np.sum(model.W * model.W))
