"""Normal-distribution primitives, the Stein solution and the bound envelopes.

The moderate-deviation results state

    |P(W > z) / (1 - Phi(z)) - 1| <= C1 e^theta (1 + z^2)
                                     (sqrt(n) d^2 + n d^3 + n d^3 z + d)

for 0 <= z <= tau(theta), together with a moment generating function bound
used in the proof. The constants C1 and the one inside delta_1 are never
pinned down, so they are parameters here with default 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_pdf(x: float) -> float:
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def normal_sf(x: float) -> float:
    """Upper tail 1 - Phi(x), computed without cancellation."""
    return 0.5 * math.erfc(x / SQRT2)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def stein_solution(w: float, z: float) -> float:
    """Bounded solution of f'(w) - w f(w) = 1{w <= z} - Phi(z)."""
    if w <= z:
        return normal_cdf(w) * normal_sf(z) / normal_pdf(w)
    return normal_cdf(z) * normal_sf(w) / normal_pdf(w)


def stein_residual(w: float, z: float, h: float = 1e-6) -> float:
    if abs(w - z) <= h:
        raise ValueError("w is within h of z; the derivative jumps there")
    fd = (stein_solution(w + h, z) - stein_solution(w - h, z)) / (2 * h)
    rhs = w * stein_solution(w, z) + (1.0 if w <= z else 0.0) - normal_cdf(z)
    return abs(fd - rhs)


@dataclass(frozen=True)
class EnvelopeParams:
    n: int
    delta: float
    theta: float
    c1: float = 1.0
    delta1_c: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0 and self.theta > 0 and self.c1 > 0 and self.delta1_c > 0):
            raise ValueError("delta, theta, c1 and delta1_c must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")


def _max_below(lhs: Callable[[float], float], theta: float, hi: float, tol: float = 1e-12) -> float:
    """Largest t in [0, hi] with lhs(t) <= theta, for nondecreasing lhs."""
    if lhs(hi) <= theta:
        return hi
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lhs(mid) <= theta:
            lo = mid
        else:
            hi = mid
    return lo


def tau_lhs(t: float, n: int, delta: float) -> float:
    d = delta
    return t ** 3 * d + math.sqrt(n) * d ** 3 * t ** 2 + n * d ** 3 * t ** 3 + t * d + t * t / n


def tau_theta(params: EnvelopeParams) -> float:
    return _max_below(lambda t: tau_lhs(t, params.n, params.delta), params.theta,
                      1.0 / params.delta)


def tau0_theta(tau: float, delta: float, delta1: Callable[[float], float],
               delta2: Callable[[float], float], theta: float) -> float:
    def lhs(t):
        return t * t * (t * delta + 2 * delta1(t)) / 2 + 3 * t * delta2(t)
    return _max_below(lhs, theta, min(tau, 1.0 / delta))


def md_bound_envelope(params: EnvelopeParams, z: float, tau: float = None) -> float:
    if tau is None:
        tau = tau_theta(params)
    if not 0 <= z <= tau:
        raise ValueError(f"z={z} outside [0, tau(theta)] = [0, {tau}]")
    n, d = params.n, params.delta
    return (params.c1 * math.exp(params.theta) * (1 + z * z)
            * (math.sqrt(n) * d ** 2 + n * d ** 3 + n * d ** 3 * z + d))


def pair_tail_bound(z: float, delta: float, delta1_at_z: float, delta2_at_z: float,
               theta: float) -> float:
    return (31 * math.exp(theta) * (1 + 9 * delta)
            * ((1 + z * z) * (delta1_at_z + delta + delta * delta2_at_z)
               + (1 + z) * delta2_at_z))


def mgf_envelope(t: float, delta: float, delta1_at_t: float, delta2_at_t: float) -> float:
    return (1 + 9 * delta) * math.exp(t * t / 2 * (1 + t * delta + 2 * delta1_at_t)
                                      + 3 * t * delta2_at_t)


def application_deltas(n: int, delta: float, c: float = 1.0):
    """delta_1(t) and the constant delta_2 for double-indexed statistics."""
    rn = math.sqrt(n)
    base = rn * delta ** 2 + n * delta ** 3 + 1 / rn
    slope = n * delta ** 3

    def delta1(t: float) -> float:
        return c * (base + slope * t)

    return delta1, math.sqrt(6) * delta


def minimal_delta1_c(estimate: float, t: float, n: int, delta: float) -> float:
    """Smallest constant in delta_1 for which the MGF envelope reaches ``estimate``.

    Returns 0 when the envelope already holds with the constant at zero.
    """
    _, d2 = application_deltas(n, delta)
    d1_unit, _ = application_deltas(n, delta, 1.0)
    if mgf_envelope(t, delta, 0.0, d2) >= estimate or t == 0:
        return 0.0
    # the envelope is exp(const + t^2 c d1_unit(t)) times a prefactor, so solve directly
    need = math.log(estimate / (1 + 9 * delta)) - t * t / 2 * (1 + t * delta) - 3 * t * d2
    return need / (t * t * d1_unit(t))
