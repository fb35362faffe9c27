"""Centering and normalization of double-indexed permutation statistics.

A kernel xi of shape (n, n, n, n) defines the statistic

    S(pi) = sum_{i,j} xi[i, j, pi[i], pi[j]]

for a permutation pi of {0, ..., n-1}. This module splits S into a linear
part driven by an n x n matrix ``a`` and a quadratic part driven by a fully
centered 4-index array ``b``, so that

    S(pi) = sigma * W(pi) + mean_shift,
    W(pi) = sum_i a[i, pi[i]] + sum_{i != j} b[i, j, pi[i], pi[j]].

Both ``a`` and ``b`` have vanishing one-index averages. It also computes the
boundedness constants that control how far W is from a normal variable.

Permutations are 0-based integer arrays throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

DENSE_MAX_N = 40
EXACT_ROW_MAX_N = 12
ZERO_ETA_RTOL = 1e-12


class KernelError(ValueError):
    """Invalid kernel data or a kernel that is too large for dense work."""


class FactoredKernel:
    """Rank-one 4-index array b[i, j, k, l] = pos[i, j] * val[k, l].

    Every built-in statistic normalizes to this form, which makes large-n
    work possible without the n**4 dense array. Indexing with a 4-tuple of
    integer arrays behaves like fancy indexing on the dense array.
    """

    def __init__(self, pos: np.ndarray, val: np.ndarray):
        pos = np.asarray(pos, dtype=float)
        val = np.asarray(val, dtype=float)
        if pos.ndim != 2 or pos.shape[0] != pos.shape[1] or val.shape != pos.shape:
            raise KernelError("factors must be square matrices of the same size")
        self.pos = pos
        self.val = val

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def shape(self) -> tuple:
        n = self.n
        return (n, n, n, n)

    def __getitem__(self, idx):
        i, j, k, l = idx
        return self.pos[i, j] * self.val[k, l]

    def dense(self) -> np.ndarray:
        return np.einsum("ij,kl->ijkl", self.pos, self.val)

    def scaled(self, factor: float) -> "FactoredKernel":
        return FactoredKernel(self.pos * factor, self.val)


BArray = Union[np.ndarray, FactoredKernel]


@dataclass(frozen=True)
class EtaPair:
    eta: np.ndarray
    eta_star: np.ndarray


@dataclass(frozen=True)
class NormalizedDips:
    """Normalized form (a, b, sigma) of a statistic plus the removed mean shift."""

    n: int
    a: np.ndarray
    b: BArray
    sigma: float
    a_is_zero: bool
    mean_shift: float

    def dense_b(self) -> np.ndarray:
        return self.b.dense() if isinstance(self.b, FactoredKernel) else self.b


@dataclass(frozen=True)
class DeltaReport:
    """Boundedness constants of a normalized statistic.

    ``delta_cross`` fixes one position and one value index and sums |b| over
    the other position and the other value independently. The coupled
    variant instead pairs the free value with the free position through a
    permutation, which is how the sums arise along the exchangeable pair;
    it is always bounded by the uncoupled version.
    """

    delta_a: float
    delta_b: float
    delta_row_relaxed: float
    delta_row_exact: Optional[float]
    delta_cross: float
    delta: float
    delta_row_sorted: Optional[float] = None
    delta_cross_coupled: float = 0.0
    delta_coupled: float = 0.0

    @property
    def delta_row(self) -> float:
        """Tightest valid upper bound on the permutation-maximized row sum."""
        vals = [self.delta_row_relaxed]
        if self.delta_row_sorted is not None:
            vals.append(self.delta_row_sorted)
        if self.delta_row_exact is not None:
            vals.append(self.delta_row_exact)
        return min(vals)

    def to_dict(self) -> dict:
        return {
            "delta_a": self.delta_a,
            "delta_b": self.delta_b,
            "delta_row_relaxed": self.delta_row_relaxed,
            "delta_row_exact": self.delta_row_exact,
            "delta_cross": self.delta_cross,
            "delta": self.delta,
            "delta_row_sorted": self.delta_row_sorted,
            "delta_cross_coupled": self.delta_cross_coupled,
            "delta_coupled": self.delta_coupled,
        }


def check_kernel(kernel, max_n: Optional[int] = DENSE_MAX_N) -> np.ndarray:
    """Validate a dense kernel and return it as a float array."""
    xi = np.asarray(kernel, dtype=float)
    if xi.ndim != 4 or len(set(xi.shape)) != 1:
        raise KernelError(f"kernel must have shape (n, n, n, n), got {xi.shape}")
    n = xi.shape[0]
    if n < 2:
        raise KernelError("kernel size n must be at least 2")
    if max_n is not None and n > max_n:
        raise KernelError(f"n={n} exceeds the dense kernel cap of {max_n}")
    if not np.all(np.isfinite(xi)):
        raise KernelError("kernel has non-finite entries")
    return xi


def check_permutation(perm, n: Optional[int] = None) -> np.ndarray:
    p = np.asarray(perm)
    if p.ndim != 1 or not np.issubdtype(p.dtype, np.integer):
        raise ValueError("permutation must be a 1-D integer array")
    if n is not None and len(p) != n:
        raise ValueError(f"permutation has length {len(p)}, expected {n}")
    if not np.array_equal(np.sort(p), np.arange(len(p))):
        raise ValueError("not a permutation of 0..n-1")
    return p


def marginal_average(kernel, fixed: dict) -> float:
    """Average of the kernel over every index position not in ``fixed``.

    ``fixed`` maps axis (0..3) to a 0-based index value.
    """
    xi = check_kernel(kernel, max_n=None)
    n = xi.shape[0]
    idx = []
    for axis in range(4):
        if axis in fixed:
            v = int(fixed[axis])
            if not 0 <= v < n:
                raise IndexError(f"index {v} out of range for axis {axis}")
            idx.append(v)
        else:
            idx.append(slice(None))
    for axis in fixed:
        if axis not in range(4):
            raise IndexError(f"axis {axis} out of range")
    return float(np.mean(xi[tuple(idx)]))


def center_kernel(kernel) -> np.ndarray:
    """Remove all marginal averages by inclusion-exclusion.

    Applying (I - mean along axis) on each of the four axes in turn expands
    to the alternating sum over all 15 marginal averages.
    """
    xs = check_kernel(kernel, max_n=None)
    for axis in range(4):
        xs = xs - xs.mean(axis=axis, keepdims=True)
    return xs


def eta_from_kernel(kernel, centered: np.ndarray) -> EtaPair:
    xi = check_kernel(kernel, max_n=None)
    xs = np.asarray(centered, dtype=float)
    if xs.shape != xi.shape:
        raise KernelError("kernel and centered kernel differ in shape")
    n = xi.shape[0]
    idx = np.arange(n)
    diag = xs[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    first = xi.mean(axis=(1, 3))   # xi(i, ., k, .)
    second = xi.mean(axis=(0, 2))  # xi(., i, ., k)
    eta = diag + n * first + n * second - n * xi.mean()
    return EtaPair(eta=eta, eta_star=double_center(eta))


def double_center(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return m - m.mean(axis=0, keepdims=True) - m.mean(axis=1, keepdims=True) + m.mean()


def eta_is_zero(eta: np.ndarray, eta_star: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(eta))))
    return float(np.max(np.abs(eta_star))) <= ZERO_ETA_RTOL * scale


def normalize(kernel) -> NormalizedDips:
    xi = check_kernel(kernel)
    n = xi.shape[0]
    xs = center_kernel(xi)
    ep = eta_from_kernel(xi, xs)
    mean_shift = n * float(ep.eta.mean())
    if eta_is_zero(ep.eta, ep.eta_star):
        return NormalizedDips(n=n, a=np.zeros((n, n)), b=xs, sigma=1.0,
                              a_is_zero=True, mean_shift=mean_shift)
    sigma2 = float(np.sum(ep.eta_star ** 2)) / (n - 1)
    if not sigma2 > 0:
        raise ArithmeticError("nonzero eta* with zero sigma; internal inconsistency")
    sigma = math.sqrt(sigma2)
    return NormalizedDips(n=n, a=ep.eta_star / sigma, b=xs / sigma, sigma=sigma,
                          a_is_zero=False, mean_shift=mean_shift)


def dips_value(kernel, perm) -> float:
    """Raw statistic sum_{i,j} xi[i, j, pi[i], pi[j]]."""
    xi = np.asarray(kernel, dtype=float)
    p = check_permutation(perm, xi.shape[0])
    idx = np.arange(len(p))
    return float(xi[idx[:, None], idx[None, :], p[:, None], p[None, :]].sum())


def evaluate(dips: NormalizedDips, perm) -> float:
    p = check_permutation(perm, dips.n)
    n = dips.n
    idx = np.arange(n)
    lin = float(dips.a[idx, p].sum())
    quad = dips.b[idx[:, None], idx[None, :], p[:, None], p[None, :]]
    quad = float(quad.sum() - np.trace(quad))
    return lin + quad


def reconstruct_check(kernel, perm, dips: Optional[NormalizedDips] = None) -> float:
    """Absolute gap between the raw sum and sigma * W + mean_shift."""
    xi = check_kernel(kernel)
    if dips is None:
        dips = normalize(xi)
    raw = dips_value(xi, perm)
    return abs(raw - (dips.sigma * evaluate(dips, perm) + dips.mean_shift))


def expected_value(dips: NormalizedDips) -> float:
    """Exact mean of W over a uniform permutation.

    The zero-marginal conditions kill the linear part and all off-diagonal
    pair sums except the i == j terms that are excluded from W, leaving
    sum_{i,k} b[i, i, k, k] / (n (n - 1)).
    """
    n = dips.n
    if isinstance(dips.b, FactoredKernel):
        tr = float(np.trace(dips.b.pos)) * float(np.trace(dips.b.val))
    else:
        idx = np.arange(n)
        tr = float(dips.b[idx[:, None], idx[:, None], idx[None, :], idx[None, :]].sum())
    return tr / (n * (n - 1))


def _row_exact(absb: np.ndarray) -> float:
    n = absb.shape[0]
    best = 0.0
    for i in range(n):
        rows = [j for j in range(n) if j != i]
        for k in range(n):
            cols = [l for l in range(n) if l != k]
            w = absb[i][np.ix_(rows, [k], cols)][:, 0, :]
            r, c = linear_sum_assignment(w, maximize=True)
            best = max(best, float(absb[i, i, k, k] + w[r, c].sum()))
    return best


def _sorted_dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rearrangement bound: entry (r, s) is max over bijections of sum x[r, m] y[s, pi(m)]."""
    xs = -np.sort(-x, axis=1)
    ys = -np.sort(-y, axis=1)
    return xs @ ys.T


def boundedness_delta(dips: NormalizedDips, exact_assignment: bool = False,
                      exact_max_n: int = EXACT_ROW_MAX_N) -> DeltaReport:
    n = dips.n
    if exact_assignment and n > exact_max_n:
        raise KernelError(f"exact row assignment refused for n={n} > {exact_max_n}")
    delta_a = float(np.max(np.abs(dips.a)))
    row_sorted = None
    if isinstance(dips.b, FactoredKernel):
        P = np.abs(dips.b.pos)
        G = np.abs(dips.b.val)
        delta_b = float(P.max() * G.max())
        row_relaxed = float(P.sum(axis=1).max() * G.max())
        cross = max(
            float(np.outer(P.sum(axis=1), G.sum(axis=1)).max()),  # fix i, k
            float(np.outer(P.sum(axis=1), G.sum(axis=0)).max()),  # fix i, l
            float(np.outer(P.sum(axis=0), G.sum(axis=1)).max()),  # fix j, k
            float(np.outer(P.sum(axis=0), G.sum(axis=0)).max()),  # fix j, l
        )
        row_sorted = float(_sorted_dot(P, G).max())
        coupled = max(
            row_sorted,
            float(_sorted_dot(P.T, G.T).max()),
            float(_sorted_dot(P, G.T).max()),
            float(_sorted_dot(P.T, G).max()),
        )
        absb = np.abs(dips.b.dense()) if exact_assignment else None
    else:
        absb = np.abs(np.asarray(dips.b, dtype=float))
        delta_b = float(absb.max())
        row_relaxed = float(absb.max(axis=3).sum(axis=1).max())
        cross = max(float(absb.sum(axis=(1, 3)).max()), float(absb.sum(axis=(1, 2)).max()),
                    float(absb.sum(axis=(0, 3)).max()), float(absb.sum(axis=(0, 2)).max()))
        coupled = max(row_relaxed,
                      float(absb.max(axis=2).sum(axis=0).max()),
                      float(absb.max(axis=2).sum(axis=1).max()),
                      float(absb.max(axis=3).sum(axis=0).max()))
    row_exact = _row_exact(absb) if exact_assignment else None
    rep = DeltaReport(delta_a=delta_a, delta_b=delta_b, delta_row_relaxed=row_relaxed,
                      delta_row_exact=row_exact, delta_cross=cross, delta=0.0,
                      delta_row_sorted=row_sorted)
    row = rep.delta_row
    coupled = min(coupled, cross)
    return DeltaReport(
        delta_a=delta_a, delta_b=delta_b, delta_row_relaxed=row_relaxed,
        delta_row_exact=row_exact, delta_cross=cross,
        delta=max(delta_a, delta_b, row, cross),
        delta_row_sorted=row_sorted, delta_cross_coupled=coupled,
        delta_coupled=max(delta_a, delta_b, row, coupled),
    )


def read_kernel_file(path: Union[str, Path], max_n: Optional[int] = DENSE_MAX_N) -> np.ndarray:
    """Read the text format: a header ``n=<int>`` then n**4 reals, row-major."""
    text = Path(path).read_text()
    lines = text.strip().splitlines()
    if not lines:
        raise KernelError("empty kernel file")
    head = lines[0].strip().replace(" ", "")
    if not head.startswith("n="):
        raise KernelError("first line must be 'n=<int>'")
    try:
        n = int(head[2:])
    except ValueError:
        raise KernelError(f"bad header {lines[0]!r}") from None
    if n < 2:
        raise KernelError("kernel size n must be at least 2")
    if max_n is not None and n > max_n:
        raise KernelError(f"n={n} exceeds the dense kernel cap of {max_n}")
    tokens = " ".join(lines[1:]).split()
    if len(tokens) != n ** 4:
        raise KernelError(f"expected {n ** 4} values, found {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise KernelError(f"non-numeric kernel entry: {exc}") from None
    return check_kernel(vals.reshape(n, n, n, n), max_n=max_n)


def write_kernel_file(path: Union[str, Path], kernel) -> None:
    xi = check_kernel(kernel, max_n=None)
    n = xi.shape[0]
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in xi.reshape(n ** 3, n))
    Path(path).write_text(f"n={n}\n{body}\n")
