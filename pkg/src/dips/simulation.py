"""Uniform permutation sampling, exact small-n oracles and Monte Carlo tails.

Sampling is split into fixed-size blocks. Block b draws from its own
xoshiro256** stream seeded by ``SeedSequence(seed, spawn_key=(b,))``, so the
set of samples does not depend on how blocks are spread across workers.
Each block returns a histogram of the raw integer statistic; merged
histograms are exact integer sums and every reported quantity (tails,
moments, MGF) is computed from the merged histogram in a fixed order.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np
from numba import njit, uint64

from .closed_form_statistics import (StatisticSpec, _merge_count_into, center_scale,
                                     raw_statistic)
from .stein_normal import normal_sf

BLOCK_SIZE = 1 << 16
MIN_SAMPLES = 10_000
ENUM_MAX_N = 8
CSV_HEADER = ["z", "tail_emp", "tail_lo", "tail_hi", "tail_normal", "ratio", "ratio_lo", "ratio_hi"]
_KIND_CODE = {"descents": 0, "inversions": 1, "mww": 2, "chatterjee": 3}


class SimulationError(ValueError):
    pass


# --- sampling --------------------------------------------------------------

def sample_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Fisher-Yates: position i swaps with a uniform j in {i, ..., n-1}."""
    p = np.arange(n)
    for i in range(n - 1):
        j = int(rng.integers(i, n))
        p[i], p[j] = p[j], p[i]
    return p


@njit(inline="always")
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@njit(inline="always")
def _next(s):
    out = _rotl(s[1] * uint64(5), 7) * uint64(9)
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return out


@njit(inline="always")
def _below(s, m):
    # Lemire's multiply-and-reject on 32-bit draws: exactly uniform on {0..m-1}
    mm = uint64(m)
    p = (_next(s) >> uint64(32)) * mm
    lo = p & uint64(0xFFFFFFFF)
    if lo < mm:
        thr = (uint64(0x100000000) - mm) % mm
        while lo < thr:
            p = (_next(s) >> uint64(32)) * mm
            lo = p & uint64(0xFFFFFFFF)
    return np.int64(p >> uint64(32))


@njit(inline="always")
def _shuffle(s, perm, n):
    for i in range(n):
        perm[i] = i
    for i in range(n - 1):
        j = i + _below(s, n - i)
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t


@njit(cache=True)
def _stream_perms(state, n, m, out):
    s = state.copy()
    for r in range(m):
        _shuffle(s, out[r], n)


def stream_permutations(seed: int, block: int, n: int, m: int) -> np.ndarray:
    """The first m permutations that block ``block`` of the sampler draws."""
    out = np.empty((m, n), dtype=np.int64)
    _stream_perms(block_state(seed, block), n, m, out)
    return out


@njit(cache=True)
def _sim_block(state, n, kind, n1, m, hist):
    s = state.copy()
    perm = np.empty(n, np.int64)
    w1 = np.empty(n, np.int64)
    w2 = np.empty(n, np.int64)
    for _ in range(m):
        _shuffle(s, perm, n)
        raw = 0
        if kind == 0:
            for i in range(n - 1):
                if perm[i] > perm[i + 1]:
                    raw += 1
        elif kind == 1:
            raw = _merge_count_into(perm, w1, w2)
        elif kind == 2:
            for i in range(n1, n):
                raw += perm[i]
            raw -= (n - n1) * (n - n1 - 1) // 2
        else:
            for i in range(n - 1):
                d = perm[i + 1] - perm[i]
                raw += d if d > 0 else -d
        hist[raw] += 1


def raw_range(spec: StatisticSpec) -> int:
    """Number of histogram cells: raw values lie in 0 .. raw_range - 1."""
    n = spec.n
    if spec.kind == "descents":
        return n
    if spec.kind == "inversions":
        return n * (n - 1) // 2 + 1
    if spec.kind == "mww":
        return spec.n1 * spec.n2 + 1
    return n * n // 2 + 1


def block_state(seed: int, block: int) -> np.ndarray:
    st = np.random.SeedSequence(seed, spawn_key=(block,)).generate_state(4, np.uint64)
    if not st.any():
        st[0] = 1
    return st


def simulate_blocks(spec: StatisticSpec, seed: int, blocks: Sequence[int],
                    num_samples: int, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Histogram of raw values over the given blocks (the pure per-worker unit)."""
    hist = np.zeros(raw_range(spec), dtype=np.int64)
    code = _KIND_CODE[spec.kind]
    for b in blocks:
        m = min(block_size, num_samples - b * block_size)
        if m > 0:
            _sim_block(block_state(seed, b), spec.n, code, spec.n1, m, hist)
    return hist


def _worker(args):
    return simulate_blocks(*args)


def _context():
    methods = mp.get_all_start_methods()
    return mp.get_context("fork" if "fork" in methods else "spawn")


def simulate_histogram(spec: StatisticSpec, num_samples: int, seed: int, workers: int = 1,
                       block_size: int = BLOCK_SIZE) -> np.ndarray:
    if num_samples < 1:
        raise SimulationError("num_samples must be positive")
    if workers < 1:
        raise SimulationError("workers must be positive")
    nblocks = -(-num_samples // block_size)
    if workers == 1 or nblocks == 1:
        return simulate_blocks(spec, seed, range(nblocks), num_samples, block_size)
    parts = [(spec, seed, list(range(w, nblocks, workers)), num_samples, block_size)
             for w in range(workers)]
    hist = np.zeros(raw_range(spec), dtype=np.int64)
    with ProcessPoolExecutor(max_workers=workers, mp_context=_context()) as ex:
        for h in ex.map(_worker, parts):
            hist += h
    return hist


# --- exact distributions ---------------------------------------------------

@dataclass(frozen=True)
class ExactDistribution:
    """Law of the normalized statistic as integer counts out of ``total``."""

    spec: StatisticSpec
    raw: np.ndarray
    counts: tuple
    total: int

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def support(self) -> np.ndarray:
        center, scale = center_scale(self.spec)
        w = (self.raw - center) / scale
        return np.sort(w)

    @property
    def pmf(self) -> np.ndarray:
        center, scale = center_scale(self.spec)
        order = np.argsort((self.raw - center) / scale)
        return np.array([self.counts[i] / self.total for i in order])

    def raw_moments(self) -> tuple:
        """Exact mean and variance of the raw statistic as fractions."""
        m1 = Fraction(sum(int(c) * int(r) for r, c in zip(self.raw, self.counts)), self.total)
        m2 = Fraction(sum(int(c) * int(r) ** 2 for r, c in zip(self.raw, self.counts)), self.total)
        return m1, m2 - m1 * m1

    def tail(self, z: float) -> float:
        k = sum(c for r, c in zip(self.raw, self.counts) if exceeds(self.spec, r, z))
        return k / self.total

    def mean_var(self) -> tuple:
        _, scale = center_scale(self.spec)
        return _hist_mean_var(self.spec, self.raw, np.array(self.counts, dtype=float))

    def mgf(self, t: float) -> float:
        center, scale = center_scale(self.spec)
        w = (self.raw - center) / scale
        return float(np.dot(np.array(self.counts, dtype=float), np.exp(t * w)) / self.total)


def eulerian_row(n: int) -> list:
    """A(n, k): permutations of n with k descents, k = 0..n-1."""
    row = [1]
    for m in range(2, n + 1):
        new = [0] * m
        for k in range(m):
            left = (k + 1) * row[k] if k < len(row) else 0
            right = (m - k) * row[k - 1] if k >= 1 else 0
            new[k] = left + right
        row = new
    return row


def exact_distribution(spec: StatisticSpec, method: str = "auto") -> ExactDistribution:
    if method == "auto":
        method = "enumerate" if spec.n <= ENUM_MAX_N else "eulerian"
    if method == "eulerian":
        if spec.kind != "descents":
            raise SimulationError(f"n={spec.n} exceeds the enumeration cap of {ENUM_MAX_N}")
        row = eulerian_row(spec.n)
        return ExactDistribution(spec, np.arange(spec.n), tuple(row), math.factorial(spec.n))
    if method != "enumerate":
        raise SimulationError(f"unknown method {method!r}")
    if spec.n > ENUM_MAX_N:
        raise SimulationError(f"n={spec.n} exceeds the enumeration cap of {ENUM_MAX_N}")
    hist: dict = {}
    for t in itertools.permutations(range(spec.n)):
        r = raw_statistic(spec, np.array(t))
        hist[r] = hist.get(r, 0) + 1
    keys = sorted(hist)
    return ExactDistribution(spec, np.array(keys), tuple(hist[k] for k in keys),
                             math.factorial(spec.n))


# --- tails ------------------------------------------------------------------

def exceeds(spec: StatisticSpec, raw, z: float):
    """W > z, decided on the raw integer scale so atoms are classified exactly."""
    center, scale = center_scale(spec)
    thr = center + z * scale
    return raw > thr if scale > 0 else raw < thr


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple:
    """Wilson score interval for a binomial proportion k / n."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = NormalDist().inv_cdf(0.5 + level / 2)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z / den * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, mid - half), min(1.0, mid + half)


def z_cap(spec: StatisticSpec) -> float:
    m = min(spec.n1, spec.n2) if spec.kind == "mww" else spec.n
    return m ** (1 / 6)


def default_z_grid(spec: StatisticSpec, step: float = 0.5, max_z: Optional[float] = None) -> list:
    cap = z_cap(spec) if max_z is None else max_z
    k = int(math.floor(cap / step + 1e-12))
    return [round(i * step, 12) for i in range(k + 1)]


def lattice_offset(spec: StatisticSpec, z: float) -> float:
    """Move z to the midpoint between the two atoms of W that bracket it."""
    center, scale = center_scale(spec)
    x = center + z * scale
    if scale > 0:
        return (math.floor(x) + 0.5 - center) / scale
    return (math.ceil(x) - 0.5 - center) / scale


@dataclass(frozen=True)
class TailRow:
    z: float
    tail_emp: float
    tail_lo: float
    tail_hi: float
    tail_normal: float
    ratio: float
    ratio_lo: float
    ratio_hi: float
    count: int

    def abs_dev_interval(self) -> tuple:
        """Interval for |ratio - 1| implied by the ratio interval."""
        lo, hi = self.ratio_lo - 1, self.ratio_hi - 1
        if lo <= 0 <= hi:
            return 0.0, max(-lo, hi)
        return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))


@dataclass
class TailRatioTable:
    rows: list
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([f"{getattr(r, c):.17g}" for c in CSV_HEADER])
        return buf.getvalue()

    def meta_json(self) -> str:
        return json.dumps(self.meta, indent=2, sort_keys=True)

    def write(self, csv_path, meta_path=None) -> None:
        from pathlib import Path
        Path(csv_path).write_text(self.to_csv())
        if meta_path is not None:
            Path(meta_path).write_text(self.meta_json() + "\n")


def _check_grid(z_grid) -> list:
    zs = [float(z) for z in z_grid]
    if not zs:
        raise SimulationError("empty z grid")
    if any(b <= a for a, b in zip(zs, zs[1:])):
        raise SimulationError("z grid must be strictly increasing")
    return zs


def table_from_histogram(spec: StatisticSpec, hist: np.ndarray, z_grid, meta: dict) -> TailRatioTable:
    zs = _check_grid(z_grid)
    total = int(hist.sum())
    raw = np.arange(len(hist))
    rows = []
    for z in zs:
        k = int(hist[exceeds(spec, raw, z)].sum())
        lo, hi = wilson_interval(k, total)
        tn = normal_sf(z)
        rows.append(TailRow(z=z, tail_emp=k / total, tail_lo=lo, tail_hi=hi, tail_normal=tn,
                            ratio=k / total / tn, ratio_lo=lo / tn, ratio_hi=hi / tn, count=k))
    return TailRatioTable(rows=rows, meta=meta)


def tail_ratio_table(spec: StatisticSpec, z_grid=None, num_samples: int = 10 ** 6,
                     seed: int = 0, workers: int = 1, allow_beyond_cap: bool = False,
                     offset_lattice: bool = False, continuity_correction: bool = False,
                     hist: Optional[np.ndarray] = None) -> TailRatioTable:
    if num_samples < MIN_SAMPLES:
        raise SimulationError(f"num_samples must be at least {MIN_SAMPLES}")
    zs = default_z_grid(spec) if z_grid is None else _check_grid(z_grid)
    cap = z_cap(spec)
    if not allow_beyond_cap and any(z > cap + 1e-12 or z < 0 for z in zs):
        raise SimulationError(f"z grid leaves [0, {cap:.6g}]; pass allow_beyond_cap to override")
    if offset_lattice:
        zs = sorted(set(lattice_offset(spec, z) for z in zs))
    if hist is None:
        hist = simulate_histogram(spec, num_samples, seed, workers)
    center, scale = center_scale(spec)
    meta = {"spec": spec.as_dict(), "n": spec.n, "kind": spec.kind,
            "normalization": spec.normalization, "num_samples": int(num_samples),
            "seed": int(seed), "workers": int(workers), "block_size": BLOCK_SIZE,
            "z_cap": cap, "offset_lattice": bool(offset_lattice),
            "center": center, "scale": scale, "tail_convention": "P(W > z), strict",
            "ci": "wilson 95%"}
    table = table_from_histogram(spec, hist, zs, meta)
    mean, var = _hist_mean_var(spec, np.arange(len(hist)), hist.astype(float))
    meta["empirical_mean"] = mean
    meta["empirical_var"] = var
    if continuity_correction:
        h = 0.5 / abs(scale)
        meta["continuity_corrected_ratio"] = [r.tail_emp / normal_sf(r.z + h) for r in table.rows]
    return table


def _hist_mean_var(spec, raw, counts) -> tuple:
    center, scale = center_scale(spec)
    total = counts.sum()
    # integer-valued raw moments first, then the affine map
    m1 = float(np.dot(counts, raw)) / total
    m2 = float(np.dot(counts, (raw - m1) ** 2)) / total
    return (m1 - center) / scale, m2 / scale ** 2


def empirical_moments(spec: StatisticSpec, num_samples: int, seed: int, workers: int = 1) -> tuple:
    """Sample mean and variance of W."""
    hist = simulate_histogram(spec, num_samples, seed, workers)
    return _hist_mean_var(spec, np.arange(len(hist)), hist.astype(float))


def mgf_estimate(spec: StatisticSpec, t: float, num_samples: int, seed: int,
                 workers: int = 1, hist: Optional[np.ndarray] = None) -> tuple:
    """Sample mean of exp(t W) and its standard error."""
    if t == 0:
        return 1.0, 0.0
    if hist is None:
        hist = simulate_histogram(spec, num_samples, seed, workers)
    center, scale = center_scale(spec)
    counts = hist.astype(float)
    total = counts.sum()
    e = np.exp(t * (np.arange(len(hist)) - center) / scale)
    mean = float(np.dot(counts, e) / total)
    var = float(np.dot(counts, (e - mean) ** 2) / (total - 1))
    return mean, math.sqrt(var / total)


def exact_tail_table(spec: StatisticSpec, z_grid, dist: Optional[ExactDistribution] = None) -> TailRatioTable:
    """Tail ratios from the exact law; the intervals collapse to points."""
    if dist is None:
        dist = exact_distribution(spec)
    rows = []
    for z in _check_grid(z_grid):
        p = dist.tail(z)
        tn = normal_sf(z)
        rows.append(TailRow(z=z, tail_emp=p, tail_lo=p, tail_hi=p, tail_normal=tn,
                            ratio=p / tn, ratio_lo=p / tn, ratio_hi=p / tn, count=-1))
    return TailRatioTable(rows=rows, meta={"spec": spec.as_dict(), "exact": True})


def scaled_error(table: TailRatioTable, n: int) -> dict:
    """c(n) = max_z |ratio - 1| sqrt(n) / (1 + z^3) at CI midpoints, with half-width."""
    best = None
    for r in table.rows:
        mid = 0.5 * (r.ratio_lo + r.ratio_hi)
        w = math.sqrt(n) / (1 + r.z ** 3)
        c = abs(mid - 1) * w
        hw = 0.5 * (r.ratio_hi - r.ratio_lo) * w
        if best is None or c > best["c"]:
            best = {"n": n, "c": c, "half_width": hw, "z": r.z}
    return best


def convergence_scan(specs: Sequence[StatisticSpec], z_grid=None, num_samples: int = 10 ** 6,
                     seed: int = 0, workers: int = 1, exact: bool = False,
                     rate_n: Optional[Sequence[int]] = None) -> list:
    """Scaled errors c(n) across a family of specs of increasing size."""
    ns = [s.n for s in specs]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise SimulationError("specs must have increasing n")
    out = []
    for idx, spec in enumerate(specs):
        cap = z_cap(spec)
        zs = [z for z in (default_z_grid(spec) if z_grid is None else z_grid) if z <= cap + 1e-12]
        if exact:
            table = exact_tail_table(spec, zs)
        else:
            table = tail_ratio_table(spec, zs, num_samples, seed, workers)
        out.append(scaled_error(table, spec.n if rate_n is None else rate_n[idx]))
    return out
