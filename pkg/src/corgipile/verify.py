"""Executable identity suite behind ``corgipile verify``.

Each check returns a dict ``{name, passed, detail, seconds}``; the suite
report lists them in order.  Nothing here is tuned to pass: a violated
identity is reported as failed.
"""

from __future__ import annotations

import math
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from corgipile.dataset.format import Tuple, TupleBatch, block_size_for, write_dataset
from corgipile.dataset.synthetic import SyntheticSpec, generate_synthetic
from corgipile.errors import ConfigError
from corgipile.rng import Purpose, substream
from corgipile.sgd.model import KINDS, Model, gradient, objective
from corgipile.theory import (
    SamplingParams,
    block_variance,
    convergence_bound_terms,
    empirical_inclusion,
    inclusion_probabilities,
    nonconvex_bound_terms,
    read_cost_model,
    sampling_variance_check,
    term1_coefficient,
    weighted_average_iterate,
)


def _check(name: str, fn) -> dict:
    t0 = time.monotonic()
    try:
        passed, detail = fn()
    except Exception as e:  # a crash is a failed identity, reported as such
        passed, detail = False, f"raised {type(e).__name__}: {e}"
    return {"name": name, "passed": bool(passed), "detail": detail, "seconds": round(time.monotonic() - t0, 4)}


def variance_identity(max_N: int = 8, sets: int = 50, seed: int = 0, tol: float = 1e-9):
    """Exhaustive subset-sum variance equals the closed form for every ``N <= max_N``, ``1 <= n <= N``."""
    rng = substream(seed, Purpose.VERIFY, index=1)
    worst = 0.0
    cases = 0
    for N in range(2, max_N + 1):
        for n in range(1, N + 1):
            for _ in range(sets):
                g = rng.standard_normal((N, 3)) * rng.uniform(0.1, 10.0)
                worst = max(worst, sampling_variance_check(g, n).rel_err)
                cases += 1
    return worst < tol, f"{cases} gradient sets, worst relative error {worst:.2e} (tolerance {tol:g})"


def inclusion_identity(N: int = 4, n: int = 2, b: int = 3, epochs: int = 100_000, seed: int = 0, sigmas: float = 3.0):
    """Sampler frequencies match the closed-form probabilities within ``sigmas`` standard errors."""
    est = empirical_inclusion(N, n, b, epochs, seed)
    z = est.z_scores()
    exact = inclusion_probabilities(N, n, b)
    parts = [f"{k}={est.estimates[k]:.5f} (exact {getattr(exact, k)}, z={z[k]:+.2f})" for k in est.estimates]
    return est.within(sigmas), f"N={N} n={n} b={b}, {epochs} epochs: " + "; ".join(parts)


def _fd_point(kind: str, rng, d: int = 5, classes: int = 3):
    while True:
        K = classes if kind == "softmax" else 1
        model = Model(kind, rng.standard_normal((K, d)), rng.standard_normal(K), float(rng.uniform(0, 0.5)))
        x = rng.standard_normal(d)
        if kind == "softmax":
            y = float(rng.integers(0, classes))
        elif kind == "squared":
            y = float(rng.standard_normal())
        else:
            y = float(rng.choice([-1.0, 1.0]))
        t = Tuple(0, y, x)
        z = float(model.W[0] @ x + model.bias[0])
        # keep away from the hinge kink so the central difference is meaningful
        if kind == "hinge" and abs(1.0 - (1.0 if y > 0 else -1.0) * z) < 1e-3:
            continue
        return model, t


def finite_difference_error(model: Model, t: Tuple, h: float = 1e-6) -> float:
    """Relative error between the analytic gradient and a central difference of the objective."""
    gW, gb, _ = gradient(model, t)
    analytic = np.concatenate([np.ravel(gW), gb])
    theta = model.params()
    numeric = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (objective(model.with_params(theta + e), t) - objective(model.with_params(theta - e), t)) / (2 * h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_identity(points: int = 100, seed: int = 0, tol: float = 1e-5):
    rng = substream(seed, Purpose.VERIFY, index=2)
    worst = {}
    for kind in KINDS:
        worst[kind] = max(finite_difference_error(*_fd_point(kind, rng)) for _ in range(points))
    ok = all(v < tol for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (worst of {points} points, tolerance {tol:g})"


def duplicate_block_dataset(path, N: int = 10, b: int = 8, d: int = 4, seed: int = 0):
    """``N`` blocks of ``b`` copies of one random tuple each, so every block is internally constant."""
    rng = substream(seed, Purpose.VERIFY, index=3)
    base = rng.standard_normal((N, d))
    ylab = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    ylab[0], ylab[1] = -1.0, 1.0
    X = np.repeat(base, b, axis=0)
    y = np.repeat(ylab, b)
    batch = TupleBatch(np.arange(N * b), y, d, dense=X)
    return write_dataset(path, batch, block_size_bytes=block_size_for(b, d))


def hd_duplicate_identity(workdir: Path, seed: int = 0):
    ds = duplicate_block_dataset(workdir / "verify-dup.ds", seed=seed)
    try:
        rep = block_variance(ds)
    finally:
        ds.close()
    ok = rep.h_D is not None and math.isclose(rep.h_D, rep.b, rel_tol=1e-12)
    return ok, f"h_D={rep.h_D!r} b={rep.b!r}"


def hd_shuffled_band(workdir: Path, seeds: int = 10, lo: float = 0.5, hi: float = 2.0):
    vals = []
    for s in range(seeds):
        spec = SyntheticSpec(m=2000, d=5, seed=s, order="shuffled", block_size_bytes=block_size_for(20, 5))
        ds = generate_synthetic(spec, workdir / f"verify-shuf-{s}.ds")
        try:
            vals.append(block_variance(ds).h_D)
        finally:
            ds.close()
    ok = all(v is not None and lo <= v <= hi for v in vals)
    return ok, f"h_D over {seeds} seeds in [{min(vals):.3f}, {max(vals):.3f}] (band [{lo}, {hi}])"


def bound_identities():
    issues = []
    p_full = SamplingParams(10, 10, 4)
    if p_full.alpha != 1 or convergence_bound_terms(p_full, 3, 2.0, 1.5, 40).term1 != 0.0:
        issues.append("alpha=1 does not zero term1")
    beta = SamplingParams(10, 5, 4).beta
    if beta != Fraction(241, 81):
        issues.append(f"beta(10,5,4)={beta}, expected 241/81")
    for N in (3, 10, 50):
        c = [term1_coefficient(N, n, 2.0, 1.5) for n in range(1, N + 1)]
        if not all(a > b for a, b in zip(c, c[1:])):
            issues.append(f"term1 coefficient not strictly decreasing in n at N={N}")
    try:
        nonconvex_bound_terms(p_full, 3, 2.0, 1.5, 40, case=1)
        issues.append("non-convex case 1 accepted alpha=1")
    except ConfigError:
        pass
    c2 = nonconvex_bound_terms(p_full, 3, 2.0, 1.5, 40)
    if c2.theorem != "nonconvex_case2":
        issues.append("alpha=1 did not select non-convex case 2")
    rc = read_cost_model(1.0, 0.0, 100, SamplingParams(10, 1, 100), 1e-3, 1.0, 10.0)
    if not math.isclose(rc.ratio, 0.1, rel_tol=1e-12):
        issues.append(f"read-cost ratio {rc.ratio}, expected 0.1")
    avg = weighted_average_iterate([np.array([1.0]), np.array([2.0])], a=1)
    if not math.isclose(float(avg[0]), (8 * 1 + 27 * 2) / 35, rel_tol=1e-15):
        issues.append(f"weighted average {avg[0]}, expected 62/35")
    return not issues, "; ".join(issues) or "alpha=1 zeroes term1; beta(10,5,4)=241/81; term1 coefficient strictly decreasing in n; case rules enforced; read-cost and averaging examples hold"


def run_identity_suite(seed: int = 0, mc_epochs: int = 100_000, workdir=None) -> dict:
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        tmp = Path(tmp)
        checks = [
            _check("block_sampling_variance", lambda: variance_identity(seed=seed)),
            _check("inclusion_probabilities", lambda: inclusion_identity(epochs=mc_epochs, seed=seed)),
            _check("gradient_finite_difference", lambda: gradient_identity(seed=seed)),
            _check("h_D_duplicate_blocks", lambda: hd_duplicate_identity(tmp, seed)),
            _check("h_D_shuffled_band", lambda: hd_shuffled_band(tmp)),
            _check("bound_terms", bound_identities),
        ]
    return {"seed": seed, "mc_epochs": mc_epochs, "checks": checks, "passed": all(c["passed"] for c in checks)}
