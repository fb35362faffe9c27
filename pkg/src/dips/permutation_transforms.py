"""Transformations that push a uniform permutation onto a conditioned fiber.

If sigma is uniform on S_n, each transform below produces a permutation that
is uniform on {pi : pi[i] = k, ...}. Composition follows
(sigma o tau)(x) = sigma(tau(x)); right-composing with a transposition of
positions swaps two entries of the array. All indices are 0-based.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class Single:
    i: int
    k: int

    @property
    def constraints(self):
        return [(self.i, self.k)]


@dataclass(frozen=True)
class Pair:
    i: int
    j: int
    k: int
    l: int

    def __post_init__(self):
        if self.i == self.j or self.k == self.l:
            raise TransformError("pair transform needs i != j and k != l")

    @property
    def constraints(self):
        return [(self.i, self.k), (self.j, self.l)]


Transform = Union[Single, Pair]


def _compose_swaps(sigma: np.ndarray, swaps) -> np.ndarray:
    """sigma o tau_1 o tau_2 o ... for position transpositions tau."""
    r = np.array(sigma, copy=True)
    for a, b in swaps:
        r[a], r[b] = r[b], r[a]
    return r


def _inverse(sigma: np.ndarray) -> np.ndarray:
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(len(sigma))
    return inv


def transform_single(sigma, i: int, k: int) -> np.ndarray:
    s = np.asarray(sigma)
    if s[i] == k:
        return s.copy()
    return _compose_swaps(s, [(i, int(_inverse(s)[k]))])


def pair_case(sigma, i: int, j: int, k: int, l: int) -> int:
    """Which of the four defining cases applies (1-4, checked top-down)."""
    s = np.asarray(sigma)
    if s[i] == l and s[j] != k:
        return 1
    if s[i] != l and s[j] == k:
        return 2
    if s[i] == l and s[j] == k:
        return 3
    return 4


def transform_pair(sigma, i: int, j: int, k: int, l: int) -> np.ndarray:
    if i == j or k == l:
        raise TransformError("pair transform needs i != j and k != l")
    s = np.asarray(sigma)
    inv = _inverse(s)
    case = pair_case(s, i, j, k, l)
    if case == 1:
        swaps = [(i, inv[k]), (j, inv[k])]
    elif case == 2:
        swaps = [(j, inv[l]), (i, inv[l])]
    elif case == 3:
        swaps = [(i, inv[k]), (j, inv[l]), (i, j)]
    else:
        swaps = [(i, inv[k]), (j, inv[l])]
    return _compose_swaps(s, swaps)


def apply_transform(sigma, t: Transform) -> np.ndarray:
    if isinstance(t, Single):
        return transform_single(sigma, t.i, t.k)
    return transform_pair(sigma, t.i, t.j, t.k, t.l)


def chain_constraints(chain: Sequence[Transform]) -> list:
    cons = [c for t in chain for c in t.constraints]
    pos = [p for p, _ in cons]
    vals = [v for _, v in cons]
    if len(set(pos)) != len(pos) or len(set(vals)) != len(vals):
        raise TransformError("chained transforms must use disjoint positions and values")
    return cons


def transform_composed(sigma, chain: Sequence[Transform]) -> np.ndarray:
    """Apply the chain with the first-listed transform acting on sigma first."""
    chain_constraints(chain)
    r = np.array(sigma, copy=True)
    for t in chain:
        r = apply_transform(r, t)
    return r


def alternating_chain(positions: Sequence[int], values: Sequence[int]) -> list:
    """Pair transforms on consecutive position pairs, then a single one if odd."""
    if len(positions) != len(values):
        raise TransformError("positions and values differ in length")
    chain: list = []
    m = len(positions)
    for t in range(0, m - 1, 2):
        chain.append(Pair(positions[t], positions[t + 1], values[t], values[t + 1]))
    if m % 2:
        chain.append(Single(positions[-1], values[-1]))
    chain_constraints(chain)
    return chain


@dataclass(frozen=True)
class FiberReport:
    n: int
    fixed: int
    fiber_size: int
    expected_count: int
    counts: dict
    off_fiber: int

    @property
    def ok(self) -> bool:
        return (self.off_fiber == 0 and len(self.counts) == self.fiber_size
                and all(c == self.expected_count for c in self.counts.values()))

    def summary(self) -> dict:
        vals = list(self.counts.values())
        return {"n": self.n, "fixed": self.fixed, "fiber_size": self.fiber_size,
                "expected_count": self.expected_count, "hit": len(vals),
                "min_count": min(vals) if vals else 0, "max_count": max(vals) if vals else 0,
                "off_fiber": self.off_fiber, "ok": self.ok}


def fiber_uniformity_test(n: int, chain: Union[Transform, Sequence[Transform]]) -> FiberReport:
    """Push all of S_n through the chain and histogram the outputs."""
    if n > 7:
        raise TransformError("exhaustive fiber test is limited to n <= 7")
    if isinstance(chain, (Single, Pair)):
        chain = [chain]
    cons = chain_constraints(chain)
    for p, v in cons:
        if not (0 <= p < n and 0 <= v < n):
            raise TransformError("constraint index out of range")
    f = len(cons)
    hist: Counter = Counter()
    off = 0
    for t in itertools.permutations(range(n)):
        out = transform_composed(np.array(t), chain)
        if any(out[p] != v for p, v in cons):
            off += 1
        hist[tuple(int(x) for x in out)] += 1
    size = math.factorial(n - f)
    return FiberReport(n=n, fixed=f, fiber_size=size,
                       expected_count=math.factorial(n) // size,
                       counts=dict(hist), off_fiber=off)
