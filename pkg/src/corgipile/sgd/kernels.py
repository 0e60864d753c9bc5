"""Compiled inner loops over CSR runs of tuples.

Dense batches go through the same kernels via :meth:`TupleBatch.csr`.  All
kernels release the GIL so a double-buffered producer can load the next
buffer while SGD runs.

Arithmetic contract (relied on for bit-exact comparisons):

* per-tuple step: ``w[j] -= eta * (c * x_j)`` for each stored coordinate, or,
  with ``lam > 0``, ``w[j] -= eta * (g[j] + lam * w[j])`` over all coordinates
  with ``g[j] = c * x_j`` (``0.0`` when absent);
* mini-batch: ``acc[j] += c * x_j`` per tuple, then
  ``w[j] -= eta * (acc[j] / count)`` (plus ``lam * w[j]`` inside the bracket),
  so a batch of one reproduces the per-tuple step exactly.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOGISTIC, HINGE, SQUARED, SOFTMAX = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _margins(W, bias, indptr, indices, values, i, z):
    lo = indptr[i]
    hi = indptr[i + 1]
    for k in range(W.shape[0]):
        acc = bias[k]
        for p in range(lo, hi):
            acc += W[k, indices[p]] * values[p]
        z[k] = acc


@njit(cache=True, nogil=True)
def _coef(kind, z, y, c):
    """Fill ``c`` with dloss/dz and return the data loss."""
    if kind == LOGISTIC:
        yy = 1.0 if y > 0 else -1.0
        t = -yy * z[0]
        if t > 0:
            loss = t + math.log1p(math.exp(-t))
        else:
            loss = math.log1p(math.exp(t))
        if z[0] >= 0:
            p = 1.0 / (1.0 + math.exp(-z[0]))
        else:
            e = math.exp(z[0])
            p = e / (1.0 + e)
        c[0] = p - (1.0 if y > 0 else 0.0)
        return loss
    if kind == HINGE:
        yy = 1.0 if y > 0 else -1.0
        margin = yy * z[0]
        if margin < 1.0:
            c[0] = -yy
            return 1.0 - margin
        c[0] = 0.0
        return 0.0
    if kind == SQUARED:
        r = z[0] - y
        c[0] = r
        return 0.5 * r * r
    K = z.shape[0]
    cls = int(y)
    mx = z[0]
    for k in range(1, K):
        if z[k] > mx:
            mx = z[k]
    s = 0.0
    for k in range(K):
        c[k] = math.exp(z[k] - mx)
        s += c[k]
    for k in range(K):
        c[k] = c[k] / s
    c[cls] -= 1.0
    return math.log(s) + mx - z[cls]


@njit(cache=True, nogil=True)
def sgd_run(kind, W, bias, lam, eta, indptr, indices, values, labels, start, stop, losses, gbuf):
    """Per-tuple SGD over rows ``start..stop``; returns the first row with a non-finite loss, or -1."""
    K = W.shape[0]
    d = W.shape[1]
    z = np.empty(K)
    c = np.empty(K)
    for i in range(start, stop):
        _margins(W, bias, indptr, indices, values, i, z)
        loss = _coef(kind, z, labels[i], c)
        losses[i] = loss
        if not math.isfinite(loss):
            return i
        lo = indptr[i]
        hi = indptr[i + 1]
        for k in range(K):
            ck = c[k]
            if lam == 0.0:
                for p in range(lo, hi):
                    W[k, indices[p]] -= eta * (ck * values[p])
            else:
                for j in range(d):
                    gbuf[j] = 0.0
                for p in range(lo, hi):
                    gbuf[indices[p]] = ck * values[p]
                for j in range(d):
                    W[k, j] -= eta * (gbuf[j] + lam * W[k, j])
            bias[k] -= eta * ck
    return -1


@njit(cache=True, nogil=True)
def accumulate_run(kind, W, bias, indptr, indices, values, labels, start, stop, losses, acc, accb, mark, touched, state):
    """Add gradients of rows ``start..stop`` (at the current model) to the accumulator.

    ``state[0]`` counts accumulated tuples, ``state[1]`` the touched coordinates
    recorded in ``touched``.  Returns the first row with a non-finite loss, or -1.
    """
    K = W.shape[0]
    z = np.empty(K)
    c = np.empty(K)
    for i in range(start, stop):
        _margins(W, bias, indptr, indices, values, i, z)
        loss = _coef(kind, z, labels[i], c)
        losses[i] = loss
        if not math.isfinite(loss):
            return i
        lo = indptr[i]
        hi = indptr[i + 1]
        for p in range(lo, hi):
            j = indices[p]
            if not mark[j]:
                mark[j] = True
                touched[state[1]] = j
                state[1] += 1
            for k in range(K):
                acc[k, j] += c[k] * values[p]
        for k in range(K):
            accb[k] += c[k]
        state[0] += 1
    return -1


@njit(cache=True, nogil=True)
def apply_update(W, bias, lam, eta, acc, accb, mark, touched, state):
    """Step with the averaged accumulated gradient, then reset the accumulator."""
    count = state[0]
    if count == 0:
        return
    K = W.shape[0]
    d = W.shape[1]
    if lam == 0.0:
        for t in range(state[1]):
            j = touched[t]
            for k in range(K):
                W[k, j] -= eta * (acc[k, j] / count)
    else:
        for j in range(d):
            for k in range(K):
                W[k, j] -= eta * (acc[k, j] / count + lam * W[k, j])
    for t in range(state[1]):
        j = touched[t]
        for k in range(K):
            acc[k, j] = 0.0
        mark[j] = False
    for k in range(K):
        bias[k] -= eta * (accb[k] / count)
        accb[k] = 0.0
    state[0] = 0
    state[1] = 0


@njit(cache=True, nogil=True)
def minibatch_run(kind, W, bias, lam, eta, batch, indptr, indices, values, labels, start, stop, losses, acc, accb, mark, touched, state):
    """Mini-batch SGD over rows ``start..stop``; a partial batch stays in the accumulator."""
    i = start
    while i < stop:
        take = min(batch - state[0], stop - i)
        bad = accumulate_run(kind, W, bias, indptr, indices, values, labels, i, i + take, losses, acc, accb, mark, touched, state)
        if bad >= 0:
            return bad
        i += take
        if state[0] == batch:
            apply_update(W, bias, lam, eta, acc, accb, mark, touched, state)
    return -1


@njit(cache=True, nogil=True)
def merge_into(acc0, accb0, mark0, touched0, state0, acc, accb, mark, touched, state):
    """All-reduce step: fold one worker's accumulator into ``acc0`` and clear it."""
    K = acc.shape[0]
    for t in range(state[1]):
        j = touched[t]
        if not mark0[j]:
            mark0[j] = True
            touched0[state0[1]] = j
            state0[1] += 1
        for k in range(K):
            acc0[k, j] += acc[k, j]
            acc[k, j] = 0.0
        mark[j] = False
    for k in range(K):
        accb0[k] += accb[k]
        accb[k] = 0.0
    state0[0] += state[0]
    state[0] = 0
    state[1] = 0


class Accumulator:
    """Gradient-sum buffers for one (logical) worker."""

    def __init__(self, K: int, d: int):
        self.acc = np.zeros((K, d))
        self.accb = np.zeros(K)
        self.mark = np.zeros(d, dtype=np.bool_)
        self.touched = np.zeros(d, dtype=np.int64)
        self.state = np.zeros(2, dtype=np.int64)

    @property
    def count(self) -> int:
        return int(self.state[0])

    def buffers(self):
        return self.acc, self.accb, self.mark, self.touched, self.state
