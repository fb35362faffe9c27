import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from dips.closed_form_statistics import (SpecError, StatisticSpec, TieError, build_kernel,
                                         center_scale, chatterjee_a, chatterjee_xi,
                                         closed_form_ab, descent_scale_candidates, descents,
                                         inversions, kernel_argument, kernel_statistic,
                                         mww_count, oscillation, raw_statistic, statistic_value)
from dips.kernel_decomposition import (KernelError, boundedness_delta, center_kernel,
                                       dips_value, eta_from_kernel, evaluate, normalize,
                                       reconstruct_check)


def perms(n):
    return [np.array(t) for t in itertools.permutations(range(n))]


def brute_inversions(p):
    n = len(p)
    return sum(1 for i in range(n) for j in range(i + 1, n) if p[i] > p[j])


def brute_mww(p, n1):
    return sum(1 for i in range(n1) for j in range(n1, len(p)) if p[i] < p[j])


SPECS = [StatisticSpec("descents", 6), StatisticSpec("inversions", 6),
         StatisticSpec.mww(2, 4), StatisticSpec("chatterjee", 6)]


def test_small_counts():
    assert descents(np.arange(7)) == 0
    assert descents([1, 0, 2]) == 1
    assert inversions(np.arange(7)) == 0
    assert inversions([2, 0, 1]) == 2
    assert oscillation(np.arange(4)) == 3
    assert oscillation([0, 2, 1]) == 3
    assert max(oscillation(p) for p in perms(4)) == 7
    assert oscillation([1, 3, 0, 2]) == 7
    assert mww_count(np.arange(4), 2, 2) == 4
    assert mww_count([3, 2, 1, 0], 2, 2) == 0
    assert np.mean([mww_count(p, 2, 2) for p in perms(4)]) == 2


def test_inversions_large_against_quadratic():
    rng = np.random.default_rng(1)
    for n in (1, 2, 17, 300):
        p = rng.permutation(n)
        assert inversions(p) == brute_inversions(p)


def test_mww_against_pair_count():
    rng = np.random.default_rng(2)
    for n1, n2 in [(1, 1), (3, 5), (20, 13)]:
        p = rng.permutation(n1 + n2)
        assert mww_count(p, n1, n2) == brute_mww(p, n1)
    with pytest.raises(SpecError):
        mww_count(np.arange(4), 1, 2)


def test_chatterjee_values():
    assert chatterjee_xi([1, 2, 3], [1, 2, 3]) == pytest.approx(math.sqrt(7.5) / 4)
    assert chatterjee_xi([1, 2, 3], [3, 2, 1]) == pytest.approx(math.sqrt(7.5) / 4)
    assert chatterjee_xi([0.3, 0.9], [5.0, -1.0]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(TieError):
        chatterjee_xi([1, 1, 2], [1, 2, 3])
    with pytest.raises(TieError):
        chatterjee_xi([1, 2, 3], [2, 2, 3])


def test_chatterjee_matches_rank_permutation():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=40), rng.normal(size=40)
    order = np.argsort(x)
    perm = np.argsort(np.argsort(y[order]))
    spec = StatisticSpec("chatterjee", 40)
    assert chatterjee_xi(x, y) == statistic_value(spec, perm)


def test_statistic_value_examples():
    assert statistic_value(StatisticSpec.mww(1, 1), [0, 1]) == pytest.approx(1.0)
    assert statistic_value(StatisticSpec("descents", 5), np.arange(5)) == pytest.approx(-2 * math.sqrt(2))
    v = statistic_value(StatisticSpec("inversions", 4, "literal"), np.arange(4))
    assert v == pytest.approx(-3 / math.sqrt(4 * 3 * 13 / 72))


def test_spec_validation():
    with pytest.raises(SpecError):
        StatisticSpec("kendall", 5)
    with pytest.raises(SpecError):
        StatisticSpec("descents", 1)
    with pytest.raises(SpecError):
        StatisticSpec("descents", 5, "other")
    with pytest.raises(SpecError):
        StatisticSpec("mww", 5, n1=2, n2=2)
    assert StatisticSpec("chatterjee_oscillation", 5).kind == "chatterjee"


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_exact_moments(n):
    n1 = n // 2
    cases = [(StatisticSpec("descents", n), Fraction(n - 1, 2), Fraction(n + 1, 12)),
             (StatisticSpec("inversions", n), Fraction(n * (n - 1), 4),
              Fraction(n * (n - 1) * (2 * n + 5), 72)),
             (StatisticSpec.mww(n1, n - n1), Fraction(n1 * (n - n1), 2),
              Fraction(n1 * (n - n1) * (n + 1), 12))]
    for spec, mean, var in cases:
        vals = [raw_statistic(spec, p) for p in perms(n)]
        m = Fraction(sum(vals), len(vals))
        v = Fraction(sum(x * x for x in vals), len(vals)) - m * m
        assert (m, v) == (mean, var), spec.kind


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_descents_of_inverse_have_same_law(n):
    a = sorted(descents(p) for p in perms(n))
    b = sorted(descents(np.argsort(p)) for p in perms(n))
    assert a == b


def test_descent_scale_arbitration():
    # only the variance_exact divisor gives unit variance on S_6
    n = 6
    vals = np.array([descents(p) for p in perms(n)], dtype=float)
    var = vals.var()
    c = descent_scale_candidates(n)
    unit = {k: abs(var / s ** 2 - 1) < 1e-12 for k, s in c.items()}
    assert unit == {"sixth": False, "kernel_sigma": False, "normalized_form": False,
                    "variance_exact": True}


def test_build_kernel_entries():
    xi = build_kernel(StatisticSpec("descents", 3))
    assert xi[0, 1, 1, 0] == 1 and xi[0, 1, 0, 1] == -1
    assert np.all(xi[1, 0] == 0)
    xi = build_kernel(StatisticSpec.mww(1, 1))
    assert xi[0, 1, 0, 1] == 1
    assert xi[0, 1, 0, 0] == 0 and xi[0, 1, 1, 0] == 0 and xi[0, 1, 1, 1] == 0
    with pytest.raises(KernelError):
        build_kernel(StatisticSpec("descents", 60))


def test_chatterjee_scale_constant():
    a = chatterjee_a(3)
    # B^2(3) = 20/9, so the raw centered distances have squared sum 40/9
    assert np.sum((a * math.sqrt(20 / 9)) ** 2) == pytest.approx(40 / 9)
    for n in (3, 7, 30):
        assert np.sum(chatterjee_a(n) ** 2) == pytest.approx(n - 1)


def test_descent_eta_star_formula():
    n = 6
    xi = build_kernel(StatisticSpec("descents", n))
    es = eta_from_kernel(xi, center_kernel(xi)).eta_star
    i = np.arange(1, n + 1)[:, None]
    k = np.arange(1, n + 1)[None, :]
    assert np.allclose(es, (n - 2 * i + 1) / n * ((k == n).astype(float) - (k == 1)), atol=1e-13)


def test_descent_normalization_small_case():
    d = normalize(build_kernel(StatisticSpec("descents", 3)))
    assert d.sigma ** 2 == pytest.approx(8 / 9)
    assert np.abs(d.a).max() == pytest.approx((2 / 3) / math.sqrt(8 / 9))


def test_chatterjee_linear_part_vanishes():
    d = normalize(build_kernel(StatisticSpec("chatterjee", 5)))
    assert d.a_is_zero
    cf = closed_form_ab(StatisticSpec("chatterjee", 5))
    assert cf.a_is_zero and np.all(cf.a == 0)


def test_mww_eta_star_formula():
    spec = StatisticSpec.mww(2, 3)
    n, n1, n2 = 5, 2, 3
    xi = build_kernel(spec)
    es = eta_from_kernel(xi, center_kernel(xi)).eta_star
    i = np.arange(1, n + 1)[:, None]
    k = np.arange(1, n + 1)[None, :]
    want = np.where(i <= n1, n2 * (n - 2 * k + 1) / (2 * n), n1 * (2 * k - n - 1) / (2 * n))
    assert np.allclose(es, want, atol=1e-13)


def aligned_gap(spec):
    gen = normalize(build_kernel(spec))
    cf = closed_form_ab(spec)
    ratio = gen.sigma / cf.sigma
    return (max(np.abs(gen.a * ratio - cf.a).max(), np.abs(gen.b * ratio - cf.dense_b()).max()),
            ratio)


@pytest.mark.parametrize("kind", ["descents", "inversions", "mww", "chatterjee"])
@pytest.mark.parametrize("n", [4, 5, 6, 8])
def test_closed_form_matches_generic(kind, n):
    spec = StatisticSpec.mww(n // 2, n - n // 2) if kind == "mww" else StatisticSpec(kind, n)
    gap, ratio = aligned_gap(spec)
    assert ratio > 0
    assert gap <= 1e-10


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_kernel_statistic_matches_dense_sum(spec):
    xi = build_kernel(spec)
    for p in perms(spec.n)[::7]:
        assert kernel_statistic(spec, p) == pytest.approx(dips_value(xi, p), abs=1e-10)


@pytest.mark.parametrize("spec", [StatisticSpec("descents", 5), StatisticSpec("inversions", 5),
                                  StatisticSpec.mww(2, 3), StatisticSpec("chatterjee", 5)],
                         ids=lambda s: s.kind)
def test_closed_form_reconstructs_every_permutation(spec):
    cf = closed_form_ab(spec)
    xi = build_kernel(spec)
    for p in perms(5):
        assert reconstruct_check(xi, p, cf) <= 1e-10


@pytest.mark.parametrize("spec", [StatisticSpec("descents", 60), StatisticSpec("inversions", 60),
                                  StatisticSpec.mww(25, 35), StatisticSpec("chatterjee", 60)],
                         ids=lambda s: s.kind)
def test_factored_form_at_large_n(spec):
    cf = closed_form_ab(spec)
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = rng.permutation(spec.n)
        assert cf.sigma * evaluate(cf, p) + cf.mean_shift == pytest.approx(
            kernel_statistic(spec, p), abs=1e-9)


@pytest.mark.parametrize("kind", ["descents", "inversions", "mww"])
def test_statistic_value_is_affine_in_kernel_sum(kind):
    n = 9
    spec = StatisticSpec.mww(4, 5) if kind == "mww" else StatisticSpec(kind, n)
    _, scale = center_scale(spec)
    # descent and inversion kernels count each event twice around a zero center
    slope, offset = (scale, spec.n1 * spec.n2 / 2) if kind == "mww" else (2 * scale, 0.0)
    cf = closed_form_ab(spec)
    rng = np.random.default_rng(6)
    for _ in range(10):
        p = rng.permutation(n)
        q = kernel_argument(spec, p)
        kernel_sum = kernel_statistic(spec, q)
        assert cf.sigma * evaluate(cf, q) + cf.mean_shift == pytest.approx(kernel_sum, abs=1e-10)
        assert statistic_value(spec, p) == pytest.approx((kernel_sum - offset) / slope, abs=1e-10)


def test_descent_literal_scale_doubles_coefficients():
    n = 10
    lit = closed_form_ab(StatisticSpec("descents", n, "literal"))
    i = np.arange(1, n + 1)[:, None]
    k = np.arange(1, n + 1)[None, :]
    eta_star = (n - 2 * i + 1) / n * ((k == n).astype(float) - (k == 1))
    assert np.allclose(lit.a, math.sqrt(6 / (n + 1)) * eta_star)


def test_delta_shrinks_like_inverse_root_n():
    ns = [25, 100, 400]
    for kind in ("descents", "inversions", "chatterjee"):
        ds = [boundedness_delta(closed_form_ab(StatisticSpec(kind, n))).delta_coupled for n in ns]
        slope = np.polyfit(np.log(ns), np.log(ds), 1)[0]
        assert -0.6 <= slope <= -0.4, (kind, slope)
    d100 = boundedness_delta(closed_form_ab(StatisticSpec("descents", 100))).delta_coupled
    assert d100 <= 10 / math.sqrt(100)
