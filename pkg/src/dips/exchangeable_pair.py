"""Exchangeable pair built by transposing two positions of the permutation.

Given W = sum_i a[i, pi[i]] + sum_{i != j} b[i, j, pi[i], pi[j]], pick an
ordered pair I != J uniformly and let pi' swap pi[I] and pi[J]. Then

    E[D | pi] = (W + R) / n,

with D the antisymmetric increment below and

    R = (sum_i a[i, pi[i]] - sum_i b[i, i, pi[i], pi[i]]) / (n - 1).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernel_decomposition import (DeltaReport, NormalizedDips, boundedness_delta,
                                   check_permutation, evaluate)


@dataclass(frozen=True)
class PairSample:
    perm: np.ndarray
    i_idx: int
    j_idx: int
    w: float
    w_prime: float
    d: float
    delta: float
    r: float
    lam: float


@dataclass
class AuditReport:
    delta: float
    max_abs_d: float
    max_abs_delta: float
    num_samples: int
    delta_uncoupled: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"delta": self.delta, "max_abs_d": self.max_abs_d,
                "max_abs_delta": self.max_abs_delta, "violations": self.violations,
                "num_samples": self.num_samples, "delta_uncoupled": self.delta_uncoupled}


def swap_pair(perm, i_idx: int, j_idx: int) -> np.ndarray:
    if i_idx == j_idx:
        raise ValueError("swap positions must differ")
    q = np.array(perm, copy=True)
    q[i_idx], q[j_idx] = q[j_idx], q[i_idx]
    return q


def _diag_b(dips: NormalizedDips, p: np.ndarray) -> np.ndarray:
    idx = np.arange(dips.n)
    return dips.b[idx, idx, p, p]


def remainder_r(dips: NormalizedDips, perm) -> float:
    p = check_permutation(perm, dips.n)
    lin = float(dips.a[np.arange(dips.n), p].sum())
    return (lin - float(_diag_b(dips, p).sum())) / (dips.n - 1)


def d_statistic(dips: NormalizedDips, perm, i_idx: int, j_idx: int) -> float:
    p = check_permutation(perm, dips.n)
    return float(_d_batch(dips, p[None, :], np.array([i_idx]), np.array([j_idx]))[0])


def _d_batch(dips, P, I, J):
    """D for each row of P with swap positions I, J (arrays of equal length)."""
    m, n = P.shape
    rows = np.arange(m)
    pI = P[rows, I]
    pJ = P[rows, J]
    s = np.arange(n)[None, :]
    keep = (s != I[:, None]) & (s != J[:, None])
    b1 = dips.b[I[:, None], s, pI[:, None], P]
    b2 = dips.b[I[:, None], s, pJ[:, None], P]
    return dips.a[I, pI] - dips.a[I, pJ] + np.where(keep, b1 - b2, 0.0).sum(axis=1)


def _touching(dips, P, I, J):
    """Terms of W that involve position I or J."""
    m, n = P.shape
    rows = np.arange(m)
    pI = P[rows, I]
    pJ = P[rows, J]
    s = np.arange(n)[None, :]
    lin = dips.a[I, pI] + dips.a[J, pJ]
    rowI = np.where(s != I[:, None], dips.b[I[:, None], s, pI[:, None], P], 0.0).sum(axis=1)
    rowJ = np.where(s != J[:, None], dips.b[J[:, None], s, pJ[:, None], P], 0.0).sum(axis=1)
    keep = (s != I[:, None]) & (s != J[:, None])
    colI = np.where(keep, dips.b[s, I[:, None], P, pI[:, None]], 0.0).sum(axis=1)
    colJ = np.where(keep, dips.b[s, J[:, None], P, pJ[:, None]], 0.0).sum(axis=1)
    return lin + rowI + rowJ + colI + colJ


def _delta_batch(dips, P, I, J):
    Q = P.copy()
    rows = np.arange(P.shape[0])
    Q[rows, I], Q[rows, J] = P[rows, J], P[rows, I]
    return _touching(dips, P, I, J) - _touching(dips, Q, I, J)


def delta_w(dips: NormalizedDips, perm, i_idx: int, j_idx: int) -> float:
    """W(pi) - W(pi') in O(n), touching only terms at the swapped positions."""
    if i_idx == j_idx:
        raise ValueError("swap positions must differ")
    p = check_permutation(perm, dips.n)
    return float(_delta_batch(dips, p[None, :], np.array([i_idx]), np.array([j_idx]))[0])


def pair_sample(dips: NormalizedDips, perm, i_idx: int, j_idx: int) -> PairSample:
    p = check_permutation(perm, dips.n)
    w = evaluate(dips, p)
    dw = delta_w(dips, p, i_idx, j_idx)
    return PairSample(perm=p, i_idx=int(i_idx), j_idx=int(j_idx), w=w, w_prime=w - dw,
                      d=d_statistic(dips, p, i_idx, j_idx), delta=dw,
                      r=remainder_r(dips, p), lam=1.0 / dips.n)


def conditional_mean_d(dips: NormalizedDips, perm) -> tuple:
    """Exact average of D over all ordered pairs, and (W + R) / n."""
    p = check_permutation(perm, dips.n)
    n = dips.n
    I, J = np.nonzero(~np.eye(n, dtype=bool))
    P = np.broadcast_to(p, (len(I), n))
    lhs = float(_d_batch(dips, P, I, J).mean())
    rhs = (evaluate(dips, p) + remainder_r(dips, p)) / n
    return lhs, rhs


def pair_bounds_audit(dips: NormalizedDips, num_samples: int, seed: int,
                      report: Optional[DeltaReport] = None, batch: int = 2048) -> AuditReport:
    """Check |D| <= 4 delta and |W - W'| <= 16 delta on random (pi, I, J).

    delta is the permutation-coupled constant, which bounds every sum that
    enters D and W - W'.
    """
    if report is None:
        report = boundedness_delta(dips)
    delta = report.delta_coupled
    n = dips.n
    rng = np.random.Generator(np.random.Philox(seed))
    out = AuditReport(delta=delta, max_abs_d=0.0, max_abs_delta=0.0,
                      num_samples=num_samples, delta_uncoupled=report.delta)
    tol = 1e-12 * max(1.0, delta)
    done = 0
    while done < num_samples:
        m = min(batch, num_samples - done)
        P = rng.permuted(np.broadcast_to(np.arange(n), (m, n)), axis=1)
        I = rng.integers(0, n, size=m)
        J = (I + rng.integers(1, n, size=m)) % n
        d = np.abs(_d_batch(dips, P, I, J))
        dw = np.abs(_delta_batch(dips, P, I, J))
        out.max_abs_d = max(out.max_abs_d, float(d.max()))
        out.max_abs_delta = max(out.max_abs_delta, float(dw.max()))
        for r in np.nonzero((d > 4 * delta + tol) | (dw > 16 * delta + tol))[0][:10]:
            out.violations.append({"perm": P[r].tolist(), "i": int(I[r]), "j": int(J[r]),
                                   "d": float(d[r]), "delta_w": float(dw[r])})
        done += m
    return out


def enumerate_pairs(dips: NormalizedDips):
    """All (pi, I, J) triples with W, W', D and R; for small n only."""
    n = dips.n
    if n > 6:
        raise ValueError("exhaustive pair enumeration is limited to n <= 6")
    for t in itertools.permutations(range(n)):
        p = np.array(t)
        w = evaluate(dips, p)
        r = remainder_r(dips, p)
        for i in range(n):
            for j in range(n):
                if i != j:
                    q = swap_pair(p, i, j)
                    yield p, i, j, w, evaluate(dips, q), d_statistic(dips, p, i, j), r


def exchangeability_check(dips: NormalizedDips) -> bool:
    """Exact symmetry of the joint law of (W, W') by multiset comparison."""
    pairs = sorted((w, wp) for _, _, _, w, wp, _, _ in enumerate_pairs(dips))
    swapped = sorted((wp, w) for w, wp in pairs)
    return pairs == swapped


def second_moment_identity(dips: NormalizedDips) -> tuple:
    """(n/2) E[D (W - W')] and E[W^2] + E[R W] by exhaustive enumeration."""
    lhs = rhs = 0.0
    count = 0
    for _, _, _, w, wp, d, r in enumerate_pairs(dips):
        lhs += d * (w - wp)
        rhs += w * w + r * w
        count += 1
    return dips.n / 2 * lhs / count, rhs / count
