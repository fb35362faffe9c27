"""The four built-in permutation statistics and their closed-form decompositions.

Each statistic is a double-indexed permutation statistic, so it has a raw
kernel (``build_kernel``) and a normalized form (``closed_form_ab``) written
down directly from the kernel's structure. All built-in kernels are products
f(i, j) g(k, l) up to terms that centering removes, so the centered quadratic
part is the rank-one array f*(i, j) g*(k, l) with f*, g* doubly centered.

Kernel conventions (0-based positions and values):

* descents: 1{i<j, k-1=l} - 1{i<j, k+1=l}; the sum equals 2 Des(pi^-1) - (n-1).
* inversions: 1{i<j} sign(k-l); the sum equals 2 Inv(pi) - n(n-1)/2.
* mww: 1{i<n1<=j, k<l}; the sum is the Mann-Whitney count.
* chatterjee: cyclic adjacency 1{j = i+1 mod n} a[k, l] plus a constant that
  makes the sum mean zero. The cyclic reading is what makes the linear part
  vanish; the data statistic itself (``statistic_value``) is non-cyclic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kernel_decomposition import (DENSE_MAX_N, FactoredKernel, KernelError,
                                   NormalizedDips, check_permutation, double_center)

KINDS = ("descents", "inversions", "mww", "chatterjee")
NORMALIZATIONS = ("variance_exact", "literal")
_ALIASES = {"chatterjee_oscillation": "chatterjee", "descent": "descents",
            "inversion": "inversions"}


class SpecError(ValueError):
    pass


class TieError(ValueError):
    pass


@dataclass(frozen=True)
class StatisticSpec:
    kind: str
    n: int
    normalization: str = "variance_exact"
    n1: int = 0
    n2: int = 0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise SpecError(f"unknown statistic kind {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise SpecError(f"unknown normalization {self.normalization!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise SpecError("n must be an integer >= 2")
        if kind == "mww":
            if self.n1 < 1 or self.n2 < 1 or self.n1 + self.n2 != self.n:
                raise SpecError("mww needs n1 >= 1, n2 >= 1 and n1 + n2 = n")

    @classmethod
    def mww(cls, n1: int, n2: int, normalization: str = "variance_exact") -> "StatisticSpec":
        return cls("mww", n1 + n2, normalization, n1, n2)

    def as_dict(self) -> dict:
        d = {"kind": self.kind, "n": int(self.n), "normalization": self.normalization}
        if self.kind == "mww":
            d.update(n1=int(self.n1), n2=int(self.n2))
        return d


# --- raw counts ------------------------------------------------------------

def descents(perm) -> int:
    p = np.asarray(perm)
    return int(np.count_nonzero(p[:-1] > p[1:]))


@njit(cache=True)
def _merge_count(p):
    return _merge_count_into(p, np.empty_like(p), np.empty_like(p))


@njit(cache=True)
def _merge_count_into(p, a, buf):
    n = p.shape[0]
    a[:] = p
    count = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[i] <= a[j]:
                    buf[k] = a[i]
                    i += 1
                else:
                    buf[k] = a[j]
                    count += mid - i
                    j += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        a, buf = buf, a
        width *= 2
    return count


def inversions(perm) -> int:
    """Pairs i < j with pi[i] > pi[j], by bottom-up merge counting."""
    return int(_merge_count(np.ascontiguousarray(perm, dtype=np.int64)))


def oscillation(perm) -> int:
    p = np.asarray(perm, dtype=np.int64)
    return int(np.abs(np.diff(p)).sum())


def mww_count(perm, n1: int, n2: int) -> int:
    """Pairs i < n1 <= j with pi[i] < pi[j].

    Each value in the second block beats every smaller value not in its own
    block, which gives the rank-sum form below.
    """
    p = np.asarray(perm, dtype=np.int64)
    if n1 < 1 or n2 < 1 or n1 + n2 != len(p):
        raise SpecError("bad split: need n1, n2 >= 1 and n1 + n2 = n")
    return int(p[n1:].sum()) - n2 * (n2 - 1) // 2


def ranks_no_ties(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    order = np.argsort(v, kind="stable")
    if np.any(np.diff(v[order]) == 0):
        raise TieError("ties detected; the statistic assumes continuous data")
    r = np.empty(len(v), dtype=np.int64)
    r[order] = np.arange(1, len(v) + 1)
    return r


def chatterjee_xi(x, y) -> float:
    """Normalized rank correlation sqrt(5n/2) (1 - 3 sum |r_{i+1} - r_i| / (n^2 - 1)).

    Pairs are sorted by x and r_i is the rank of the i-th reordered y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("x and y must be 1-D of equal length >= 2")
    ranks_no_ties(x)
    r = ranks_no_ties(y[np.argsort(x, kind="stable")])
    return _chatterjee_from_osc(oscillation(r), len(x))


def _chatterjee_from_osc(osc: float, n: int) -> float:
    return math.sqrt(5 * n / 2) * (1 - 3 * osc / (n * n - 1))


# --- normalization ---------------------------------------------------------

def raw_statistic(spec: StatisticSpec, perm) -> int:
    if spec.kind == "descents":
        return descents(perm)
    if spec.kind == "inversions":
        return inversions(perm)
    if spec.kind == "mww":
        return mww_count(perm, spec.n1, spec.n2)
    return oscillation(perm)


def center_scale(spec: StatisticSpec) -> tuple:
    """(center, scale) with W = (raw - center) / scale.

    The chatterjee scale is negative because W decreases in the oscillation.
    """
    n = spec.n
    if spec.kind == "descents":
        s2 = (n + 1) / 6 if spec.normalization == "literal" else (n + 1) / 12
        return (n - 1) / 2, math.sqrt(s2)
    if spec.kind == "inversions":
        return n * (n - 1) / 4, math.sqrt(n * (n - 1) * (2 * n + 5) / 72)
    if spec.kind == "mww":
        n1, n2 = spec.n1, spec.n2
        return n1 * n2 / 2, math.sqrt(n1 * n2 * (n + 1) / 12)
    return (n * n - 1) / 3, -(n * n - 1) / (3 * math.sqrt(5 * n / 2))


def statistic_value(spec: StatisticSpec, perm) -> float:
    p = check_permutation(perm, spec.n)
    if spec.kind == "chatterjee":
        return _chatterjee_from_osc(oscillation(p), spec.n)
    center, scale = center_scale(spec)
    return (raw_statistic(spec, p) - center) / scale


def descent_scale_candidates(n: int) -> dict:
    """Candidate divisors for Des - (n-1)/2.

    ``sixth`` divides by sqrt((n+1)/6); ``kernel_sigma`` takes sigma^2 =
    2(n+1)/3 on the kernel sum 2 Des - (n-1) and coincides with it;
    ``normalized_form`` uses sum(eta*^2)/(n-1) = 2(n+1)/(3n) instead, and
    ``variance_exact`` is the true standard deviation sqrt((n+1)/12).
    """
    return {
        "sixth": math.sqrt((n + 1) / 6),
        "kernel_sigma": math.sqrt(2 * (n + 1) / 3) / 2,
        "normalized_form": math.sqrt(2 * (n + 1) / (3 * n)) / 2,
        "variance_exact": math.sqrt((n + 1) / 12),
    }


# --- kernels ---------------------------------------------------------------

def chatterjee_a(n: int) -> np.ndarray:
    """Doubly centered distance matrix |k - l| divided by B(n)."""
    k = np.arange(n)
    alpha = np.abs(k[:, None] - k[None, :]).astype(float)
    b2 = (n + 1) * (2 * n * n + 7) / 45
    return double_center(alpha) / math.sqrt(b2)


def _factors(spec: StatisticSpec) -> tuple:
    """Raw position factor f(i, j) and value factor g(k, l)."""
    n = spec.n
    i = np.arange(n)
    if spec.kind in ("descents", "inversions"):
        f = (i[:, None] < i[None, :]).astype(float)
        if spec.kind == "descents":
            g = (i[:, None] - 1 == i[None, :]).astype(float) - (i[:, None] + 1 == i[None, :])
        else:
            g = np.sign(i[:, None] - i[None, :]).astype(float)
    elif spec.kind == "mww":
        f = ((i[:, None] < spec.n1) & (i[None, :] >= spec.n1)).astype(float)
        g = (i[:, None] < i[None, :]).astype(float)
    else:
        f = (i[None, :] == (i[:, None] + 1) % n).astype(float)
        g = chatterjee_a(n)
    return f, g


def build_kernel(spec: StatisticSpec, max_n: int = DENSE_MAX_N) -> np.ndarray:
    n = spec.n
    if n > max_n:
        raise KernelError(f"n={n} exceeds the dense kernel cap of {max_n}")
    f, g = _factors(spec)
    xi = np.einsum("ij,kl->ijkl", f, g)
    if spec.kind == "chatterjee":
        a = g
        xi += (np.diag(a) / (n * (n - 1)))[:, None, None, None]
    return xi


def kernel_statistic(spec: StatisticSpec, perm) -> float:
    """sum_{i,j} xi[i, j, pi[i], pi[j]] for the built-in kernel, in O(n log n)."""
    p = check_permutation(perm, spec.n)
    n = spec.n
    if spec.kind == "descents":
        return 2.0 * descents(np.argsort(p)) - (n - 1)
    if spec.kind == "inversions":
        return 2.0 * inversions(p) - n * (n - 1) / 2
    if spec.kind == "mww":
        return float(mww_count(p, spec.n1, spec.n2))
    a = chatterjee_a(n)
    return float(a[p, np.roll(p, -1)].sum() + np.trace(a) / (n - 1))


def kernel_argument(spec: StatisticSpec, perm) -> np.ndarray:
    """Permutation to feed the kernel so that it reproduces ``statistic_value``.

    The descent kernel counts descents of the inverse, so the inverse is
    passed; the other kernels read the permutation as is.
    """
    p = check_permutation(perm, spec.n)
    return np.argsort(p) if spec.kind == "descents" else p


def _sigma(spec: StatisticSpec) -> float:
    n = spec.n
    if spec.kind == "descents":
        # kernel sum is 2 (Des - (n-1)/2)
        if spec.normalization == "literal":
            return math.sqrt((n + 1) / 6)
        return math.sqrt((n + 1) / 3)
    if spec.kind == "inversions":
        return math.sqrt(n * (n - 1) * (2 * n + 5) / 18)
    if spec.kind == "mww":
        return math.sqrt(spec.n1 * spec.n2 * (n + 1) / 12)
    return 1.0


def closed_form_ab(spec: StatisticSpec) -> NormalizedDips:
    """Normalized form written down from the explicit centered factors."""
    n = spec.n
    i = np.arange(1, n + 1, dtype=float)
    I, J = i[:, None], i[None, :]
    K, L = I, J
    if spec.kind in ("descents", "inversions"):
        pos = (I < J) - (n - 1 + 2 * (J - I)) / (2 * n)
        if spec.kind == "descents":
            val = ((K - 1 == L).astype(float) - (K + 1 == L)
                   - ((K == n).astype(float) - (K == 1)) / n
                   - ((L == 1).astype(float) - (L == n)) / n)
            eta_star = ((n - 2 * I + 1) / n) * ((K.T == n).astype(float) - (K.T == 1))
        else:
            val = np.sign(K - L) - (2 * K - n - 1) / n + (2 * L - n - 1) / n
            eta_star = (n - 2 * I + 1) * (2 * J - n - 1) / n
        mean_shift = 0.0
    elif spec.kind == "mww":
        n1, n2 = spec.n1, spec.n2
        u = (i <= n1).astype(float)
        v = 1.0 - u
        pos = np.outer(u, v) - (n2 / n) * u[:, None] - (n1 / n) * v[None, :] + n1 * n2 / n ** 2
        val = (K < L) - (n - 1 + 2 * (L - K)) / (2 * n)
        eta_star = (u[:, None] * n2 * (n - 2 * J + 1) / (2 * n)
                    + v[:, None] * n1 * (2 * J - n - 1) / (2 * n))
        mean_shift = n1 * n2 * (n * n - 1) / (2 * n * n)
    else:
        a = chatterjee_a(n)
        nxt = (J == I % n + 1).astype(float)
        b = FactoredKernel(nxt - 1.0 / n, a)
        return NormalizedDips(n=n, a=np.zeros((n, n)), b=b, sigma=1.0, a_is_zero=True,
                              mean_shift=float(np.trace(a)) / (n * (n - 1)))
    sigma = _sigma(spec)
    return NormalizedDips(n=n, a=eta_star / sigma, b=FactoredKernel(pos / sigma, val),
                          sigma=sigma, a_is_zero=False, mean_shift=mean_shift)
