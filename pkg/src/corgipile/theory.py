"""Checkable parts of the CorgiPile analysis.

Covers block-sampling probabilities and variance, the ``h_D`` clustering
factor, the convergence-bound terms (reported without their hidden constant),
the read-cost comparison against per-tuple random access, and the weighted
average iterate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from corgipile.dataset.format import DatasetFile, TupleBatch
from corgipile.errors import BudgetError, ConfigError
from corgipile.sgd.model import Model
from corgipile.sgd.train import margins
from corgipile.shuffle.corgipile import corgipile_plan, corgipile_psi

ENUMERATION_BUDGET = 1_000_000


@dataclass(frozen=True)
class SamplingParams:
    """``N`` blocks, ``n`` of them buffered per epoch, ``b`` tuples per block.

    ``alpha``, ``beta``, ``gamma`` are exact rationals.
    """

    N: int
    n: int
    b: int

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError(f"need N >= 2 blocks, got {self.N}")
        if not 1 <= self.n <= self.N:
            raise ConfigError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")
        if self.b < 1:
            raise ConfigError(f"need b >= 1, got {self.b}")

    @property
    def alpha(self) -> Fraction:
        return Fraction(self.n - 1, self.N - 1)

    @property
    def beta(self) -> Fraction:
        a = self.alpha
        return a * a + (1 - a) ** 2 * (self.b - 1) ** 2

    @property
    def gamma(self) -> Fraction:
        return Fraction(self.n ** 3, self.N ** 3)


# ---------------------------------------------------------------- h_D


@dataclass
class VarianceReport:
    """Per-tuple and block-mean gradient spread at one model point.

    ``h_D`` is ``None`` when ``sigma2`` is zero (every tuple has the same
    gradient), in which case the ratio is undefined.
    """

    sigma2: float
    block_var: float
    b: float
    N: int
    m: int
    h_D: float | None

    @property
    def defined(self) -> bool:
        return self.h_D is not None

    def to_dict(self) -> dict:
        return asdict(self)


def per_tuple_gradients(model: Model, batch: TupleBatch) -> np.ndarray:
    """``(k, K*d + K)`` matrix of data-loss gradients (weights then bias) for each tuple."""
    Z = margins(model, batch)
    y = batch.labels.astype(np.float64)
    if model.kind == "logistic":
        C = (0.5 * (1.0 + np.tanh(0.5 * Z[:, 0])) - (y > 0))[:, None]
    elif model.kind == "hinge":
        yy = np.where(y > 0, 1.0, -1.0)
        C = np.where(yy * Z[:, 0] < 1.0, -yy, 0.0)[:, None]
    elif model.kind == "squared":
        C = (Z[:, 0] - y)[:, None]
    else:
        P = np.exp(Z - Z.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        P[np.arange(len(y)), y.astype(np.int64)] -= 1.0
        C = P
    X = batch.to_dense().astype(np.float64)
    G = (C[:, :, None] * X[:, None, :]).reshape(len(batch), -1)
    return np.hstack([G, C])


def block_variance(ds: DatasetFile, model: Model | None = None, kind: str = "logistic") -> VarianceReport:
    """Exact ``sigma^2``, block-mean variance and ``h_D`` at ``model`` (default: zero weights).

    ``b`` is the mean block size ``m / N``, which is the block size itself
    whenever blocks are equal.  Two passes: the first finds the full gradient,
    the second measures deviations from it.
    """
    if model is None:
        model = Model.zeros(kind, ds.d, ds.meta.num_classes)
    full = None
    for batch in ds.iter_blocks():
        g = per_tuple_gradients(model, batch).sum(axis=0)
        full = g if full is None else full + g
    full = full / ds.m
    dev_sum, block_sum = 0.0, 0.0
    for batch in ds.iter_blocks():
        D = per_tuple_gradients(model, batch) - full
        dev_sum += float(np.sum(D * D))
        mean_dev = D.mean(axis=0)
        block_sum += float(mean_dev @ mean_dev)
    sigma2 = dev_sum / ds.m
    block_var = block_sum / ds.N
    b = ds.m / ds.N
    h = block_var / (sigma2 / b) if sigma2 > 0 else None
    return VarianceReport(sigma2, block_var, b, ds.N, ds.m, h)


# ---------------------------------------------------------------- block-sampling variance


@dataclass
class VarianceCheck:
    lhs: float
    rhs: float
    rel_err: float
    subsets: int


def sampling_variance_check(g, n: int, budget: int = ENUMERATION_BUDGET) -> VarianceCheck:
    """Compare the exact variance of a random ``n``-block sum with its closed form.

    ``g`` holds one gradient sum per block (shape ``(N,)`` or ``(N, P)``).  The
    left side enumerates every ``n``-subset and takes the variance of the
    subset sums around their enumerated mean.  The right side is
    ``n (N - n) / (N - 1) * (1/N) * sum_l ||g_l - mean(g)||^2``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    N = g.shape[0]
    if N < 2 or not 1 <= n <= N:
        raise ConfigError(f"need N >= 2 and 1 <= n <= N, got N={N}, n={n}")
    count = math.comb(N, n)
    if count > budget:
        raise BudgetError(f"C({N},{n}) = {count} subsets exceeds the enumeration budget {budget}")
    sums = np.empty((count, g.shape[1]))
    for r, subset in enumerate(itertools.combinations(range(N), n)):
        sums[r] = g[list(subset)].sum(axis=0)
    dev = sums - sums.mean(axis=0)
    lhs = float(np.mean(np.sum(dev * dev, axis=1)))
    gd = g - g.mean(axis=0)
    rhs = n * (N - n) / (N - 1) * float(np.sum(gd * gd)) / N
    scale = max(abs(lhs), abs(rhs))
    rel = 0.0 if scale == 0 else abs(lhs - rhs) / scale
    return VarianceCheck(lhs, rhs, rel, count)


# ---------------------------------------------------------------- inclusion probabilities


@dataclass(frozen=True)
class InclusionProbabilities:
    """Closed forms, as exact rationals.

    * ``single``: tuple ``i`` lands in slot ``k``.
    * ``pair_same_block``: two distinct tuples of one block land in slots ``k != k'``.
    * ``pair_cross_block``: the same for tuples from two different blocks.
    * ``block``: a given block is sampled.
    * ``block_pair``: two given blocks are both sampled.
    """

    single: Fraction
    pair_same_block: Fraction
    pair_cross_block: Fraction
    block: Fraction
    block_pair: Fraction

    def as_floats(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


def inclusion_probabilities(N: int, n: int, b: int) -> InclusionProbabilities:
    SamplingParams(N, n, b)
    slots = n * b
    pair_den = N * b * (slots - 1)
    return InclusionProbabilities(
        single=Fraction(1, N * b),
        pair_same_block=Fraction(1, pair_den) if slots > 1 else Fraction(0),
        pair_cross_block=Fraction(n - 1, pair_den * (N - 1)) if slots > 1 else Fraction(0),
        block=Fraction(n, N),
        block_pair=Fraction(n * (n - 1), N * (N - 1)),
    )


@dataclass
class InclusionEstimate:
    """Monte Carlo frequencies from the real sampler, with standard errors.

    ``estimates`` and ``stderr`` are keyed like :class:`InclusionProbabilities`;
    each is the frequency of one representative event (slot 0 / slot 1,
    tuples and blocks chosen as documented in :func:`empirical_inclusion`).
    ``single_matrix`` is the full slot-by-tuple frequency table.
    """

    epochs: int
    estimates: dict[str, float]
    stderr: dict[str, float]
    expected: dict[str, float]
    single_matrix: np.ndarray
    block_freq: np.ndarray

    def z_scores(self) -> dict[str, float]:
        out = {}
        for k, est in self.estimates.items():
            se = self.stderr[k]
            diff = est - self.expected[k]
            out[k] = 0.0 if diff == 0 else (diff / se if se > 0 else math.inf)
        return out

    def within(self, sigmas: float = 3.0) -> bool:
        return all(abs(z) <= sigmas for z in self.z_scores().values())


def empirical_inclusion(N: int, n: int, b: int, epochs: int, seed: int = 0) -> InclusionEstimate:
    """Run the CorgiPile sampler for ``epochs`` epochs on ``N`` blocks of ``b`` tuples.

    Representative events: tuple 0 in slot 0 (single); tuples 0 and 1 (same
    block) in slots 0 and 1 (pair_same_block); tuples 0 and ``b`` (blocks 0
    and 1) in slots 0 and 1 (pair_cross_block); block 0 sampled (block);
    blocks 0 and 1 both sampled (block_pair).  The standard error of each
    frequency is ``sqrt(p (1 - p) / epochs)`` at the closed-form ``p``.
    """
    expected = inclusion_probabilities(N, n, b).as_floats()
    counts = np.full(N, b, dtype=np.int64)
    starts = np.arange(N + 1, dtype=np.int64) * b
    slots = n * b
    single = np.zeros((slots, N * b), dtype=np.int64)
    block_hits = np.zeros(N, dtype=np.int64)
    hits = dict.fromkeys(expected, 0)
    rows = np.arange(slots)
    for s in range(epochs):
        plan = corgipile_plan(N, n, seed, s, mode="sample")
        psi = corgipile_psi(counts, starts, plan, seed, s)
        single[rows, psi] += 1
        chosen = plan[0]
        block_hits[chosen] += 1
        in0 = 0 in chosen
        in1 = 1 in chosen
        hits["block"] += in0
        hits["block_pair"] += in0 and in1
        hits["single"] += psi[0] == 0
        if slots > 1:
            hits["pair_same_block"] += b > 1 and psi[0] == 0 and psi[1] == 1
            hits["pair_cross_block"] += N > 1 and psi[0] == 0 and psi[1] == b
    est = {k: v / epochs for k, v in hits.items()}
    # events that cannot be formed are left out rather than reported as matches
    if b == 1 or slots == 1:
        est.pop("pair_same_block")
        expected.pop("pair_same_block")
    if slots == 1:
        est.pop("pair_cross_block")
        expected.pop("pair_cross_block")
    se = {k: math.sqrt(p * (1 - p) / epochs) for k, p in expected.items()}
    return InclusionEstimate(epochs, est, se, expected, single / epochs, block_hits / epochs)


# ---------------------------------------------------------------- bound terms


@dataclass
class BoundTerms:
    """Constant-free convergence-bound terms; the sum omits the hidden constant."""

    theorem: str
    T: int
    term1: float
    term2: float
    term3: float
    alpha: float
    beta: float
    gamma: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        d["constant_free"] = True
        return d


def _T(params: SamplingParams, S: int) -> int:
    T = S * params.n * params.b
    if T < 1:
        raise ConfigError("T = S*n*b must be >= 1")
    return T


def convergence_bound_terms(params: SamplingParams, S: int, h_D: float, sigma2: float, m: int) -> BoundTerms:
    """Strongly convex case: ``(1-alpha) h_D sigma^2 / T``, ``beta / T^2``, ``gamma m^3 / T^3``."""
    T = _T(params, S)
    a, beta, gamma = params.alpha, params.beta, params.gamma
    return BoundTerms(
        "strongly_convex", T,
        float(1 - a) * h_D * sigma2 / T,
        float(beta) / T ** 2,
        float(gamma) * m ** 3 / T ** 3,
        float(a), float(beta), float(gamma),
    )


def nonconvex_bound_terms(params: SamplingParams, S: int, h_D: float, sigma2: float, m: int, case: int | None = None) -> BoundTerms:
    """Smooth non-convex case.

    Case 1 (``alpha <= (N-2)/(N-1)``, i.e. ``n < N``):
    ``sqrt(1-alpha) sqrt(h_D) sigma / sqrt(T) + beta' / T + gamma' m^3 / T^1.5`` with
    ``beta' = alpha^2 / ((1-alpha) h_D sigma^2) + (1-alpha)(b-1)^2 / (h_D sigma^2)`` and
    ``gamma' = n^3 / ((1-alpha) N^3)``.

    Case 2 (``alpha = 1``): ``1 / T^(2/3) + (n^3/N^3) m^3 / T``.

    ``case=None`` picks the case from ``alpha``.  Requesting case 1 with
    ``alpha = 1`` is rejected because its factors divide by ``1 - alpha``.
    """
    T = _T(params, S)
    a = params.alpha
    if case is None:
        case = 2 if a == 1 else 1
    if case == 1:
        if a == 1 or a > Fraction(params.N - 2, params.N - 1):
            raise ConfigError("case 1 needs alpha <= (N-2)/(N-1); alpha = 1 divides by (1 - alpha)")
        if h_D <= 0 or sigma2 <= 0:
            raise ConfigError("case 1 needs h_D > 0 and sigma^2 > 0")
        one_minus = float(1 - a)
        beta_p = float(a * a) / (one_minus * h_D * sigma2) + one_minus * (params.b - 1) ** 2 / (h_D * sigma2)
        gamma_p = float(params.gamma) / one_minus
        return BoundTerms(
            "nonconvex_case1", T,
            math.sqrt(one_minus) * math.sqrt(h_D) * math.sqrt(sigma2) / math.sqrt(T),
            beta_p / T,
            gamma_p * m ** 3 / T ** 1.5,
            float(a), beta_p, gamma_p,
        )
    if case == 2:
        if a != 1:
            raise ConfigError("case 2 applies only when alpha = 1 (n = N)")
        gamma = float(params.gamma)
        return BoundTerms("nonconvex_case2", T, 1.0 / T ** (2.0 / 3.0), 0.0, gamma * m ** 3 / T, 1.0, 0.0, gamma)
    raise ConfigError(f"unknown case {case}")


def term1_coefficient(N: int, n: int, h_D: float, sigma2: float) -> float:
    """``(1 - alpha) h_D sigma^2``, the leading-term coefficient of the strongly convex bound."""
    return float(1 - Fraction(n - 1, N - 1)) * h_D * sigma2


# ---------------------------------------------------------------- read cost


@dataclass
class ReadCost:
    vanilla: float
    corgipile: float
    ratio: float
    latency_ratio: float
    transfer_ratio: float


def read_cost_model(t_lat: float, t_t: float, b: float, params: SamplingParams, eps: float, sigma2: float, h_D: float) -> ReadCost:
    """Time to reach error ``eps`` with per-tuple random reads vs. CorgiPile block reads.

    vanilla ``(sigma^2/eps)(t_lat + t_t)``; CorgiPile
    ``(1-alpha)(h_D/b)(sigma^2/eps) t_lat + (1-alpha) h_D (sigma^2/eps) t_t``.
    ``latency_ratio`` and ``transfer_ratio`` are the per-component ratios.
    """
    if min(t_lat, t_t, b, eps, sigma2, h_D) < 0:
        raise ConfigError("read-cost inputs must be non-negative")
    if eps <= 0 or b <= 0:
        raise ConfigError("eps and b must be positive")
    one_minus = float(1 - params.alpha)
    scale = sigma2 / eps
    vanilla = scale * (t_lat + t_t)
    corgi = one_minus * (h_D / b) * scale * t_lat + one_minus * h_D * scale * t_t
    return ReadCost(
        vanilla, corgi,
        corgi / vanilla if vanilla > 0 else math.nan,
        one_minus * h_D / b,
        one_minus * h_D,
    )


# ---------------------------------------------------------------- averaging


def weighted_average_iterate(iterates: Sequence[np.ndarray], a: float, start: int = 1) -> np.ndarray:
    """``sum_s (s+a)^3 x_s / sum_s (s+a)^3`` with ``s`` counting from ``start``."""
    if len(iterates) == 0:
        raise ValueError("need at least one iterate")
    X = np.asarray([np.asarray(x, dtype=np.float64) for x in iterates])
    w = (np.arange(start, start + len(X), dtype=np.float64) + a) ** 3
    if np.any(w <= 0):
        raise ConfigError("weights (s + a)^3 must be positive")
    return np.tensordot(w, X, axes=1) / w.sum()
