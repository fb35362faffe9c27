import itertools
import math

import numpy as np
import pytest

from dips.kernel_decomposition import (FactoredKernel, KernelError, boundedness_delta,
                                       center_kernel, check_permutation, dips_value,
                                       double_center, eta_from_kernel, evaluate,
                                       expected_value, marginal_average, normalize,
                                       read_kernel_file, reconstruct_check, write_kernel_file)


def brute_center(xi):
    """Alternating sum over all subsets of averaged axes, written out longhand."""
    out = np.zeros_like(xi)
    for r in range(5):
        for axes in itertools.combinations(range(4), r):
            m = xi.mean(axis=axes, keepdims=True) if axes else xi
            out = out + (-1) ** r * np.broadcast_to(m, xi.shape)
    return out


def brute_sum(xi, p):
    n = len(p)
    return sum(xi[i, j, p[i], p[j]] for i in range(n) for j in range(n))


def all_perms(n):
    return [np.array(t) for t in itertools.permutations(range(n))]


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_center_matches_inclusion_exclusion(rng):
    xi = rng.normal(size=(4, 4, 4, 4))
    assert np.allclose(center_kernel(xi), brute_center(xi), atol=1e-13)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_centered_marginals_vanish(rng, n):
    xs = center_kernel(rng.normal(size=(n,) * 4))
    for ax in range(4):
        assert np.abs(xs.mean(axis=ax)).max() < 1e-13


def test_marginal_average_matches_loop(rng):
    xi = rng.normal(size=(3, 3, 3, 3))
    vals = [xi[1, j, k, 2] for j in range(3) for k in range(3)]
    assert marginal_average(xi, {0: 1, 3: 2}) == pytest.approx(np.mean(vals), abs=1e-15)
    assert marginal_average(xi, {}) == pytest.approx(xi.mean())
    with pytest.raises(IndexError):
        marginal_average(xi, {0: 5})


def test_dips_value_matches_double_loop(rng):
    xi = rng.normal(size=(5,) * 4)
    p = rng.permutation(5)
    assert dips_value(xi, p) == pytest.approx(brute_sum(xi, p), abs=1e-12)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_reconstruction_over_all_permutations(rng, n):
    xi = rng.normal(size=(n,) * 4)
    d = normalize(xi)
    scale = max(1.0, np.abs(xi).max())
    worst = max(reconstruct_check(xi, p, d) for p in all_perms(n))
    assert worst <= 1e-10 * scale


def test_normalized_form_properties(rng):
    n = 5
    d = normalize(rng.normal(size=(n,) * 4))
    assert not d.a_is_zero
    assert np.sum(d.a ** 2) == pytest.approx(n - 1, rel=1e-12)
    assert np.abs(d.a.mean(axis=0)).max() < 1e-14
    assert np.abs(d.a.mean(axis=1)).max() < 1e-14
    for ax in range(4):
        assert np.abs(d.b.mean(axis=ax)).max() < 1e-14


def test_eta_star_is_doubly_centered(rng):
    xi = rng.normal(size=(4,) * 4)
    ep = eta_from_kernel(xi, center_kernel(xi))
    assert np.abs(ep.eta_star.mean(axis=0)).max() < 1e-14
    assert np.abs(ep.eta_star.mean(axis=1)).max() < 1e-14
    assert np.allclose(ep.eta_star, double_center(ep.eta))


def test_constant_plus_separable_kernel_is_zero_linear():
    n = 4
    xi = np.ones((n,) * 4) * 3.0
    d = normalize(xi)
    assert d.a_is_zero
    assert d.sigma == 1.0
    for p in all_perms(n):
        assert reconstruct_check(xi, p, d) < 1e-12


@pytest.mark.parametrize("n", [3, 4, 5])
def test_expected_value_matches_enumeration(rng, n):
    d = normalize(rng.normal(size=(n,) * 4))
    mean = np.mean([evaluate(d, p) for p in all_perms(n)])
    assert expected_value(d) == pytest.approx(mean, abs=1e-12)


def test_factored_kernel_indexing(rng):
    pos = rng.normal(size=(4, 4))
    val = rng.normal(size=(4, 4))
    fk = FactoredKernel(pos, val)
    dense = fk.dense()
    idx = (np.array([0, 1]), np.array([2, 3]), np.array([1, 1]), np.array([0, 3]))
    assert np.allclose(fk[idx], dense[idx])
    assert fk.shape == (4, 4, 4, 4)
    with pytest.raises(KernelError):
        FactoredKernel(pos, val[:3, :3])


def brute_row_max(absb):
    """max over i, k and permutations pi with pi(i) = k of sum_j |b(i, j, k, pi(j))|."""
    n = absb.shape[0]
    best = 0.0
    for p in all_perms(n):
        for i in range(n):
            best = max(best, sum(absb[i, j, p[i], p[j]] for j in range(n)))
    return best


def test_exact_row_bound_matches_brute_force(rng):
    d = normalize(rng.normal(size=(4,) * 4))
    rep = boundedness_delta(d, exact_assignment=True)
    assert rep.delta_row_exact == pytest.approx(brute_row_max(np.abs(d.b)), abs=1e-12)
    assert rep.delta_row_exact <= rep.delta_row_relaxed + 1e-12


def test_delta_ordering(rng):
    d = normalize(rng.normal(size=(5,) * 4))
    rep = boundedness_delta(d)
    assert rep.delta_coupled <= rep.delta + 1e-15
    assert rep.delta_cross_coupled <= rep.delta_cross + 1e-15
    assert rep.delta >= max(rep.delta_a, rep.delta_b)


def test_exact_row_refused_above_cap(rng):
    d = normalize(rng.normal(size=(4,) * 4))
    with pytest.raises(KernelError):
        boundedness_delta(d, exact_assignment=True, exact_max_n=3)


def test_kernel_file_roundtrip(tmp_path, rng):
    xi = rng.normal(size=(3,) * 4)
    path = tmp_path / "k.txt"
    write_kernel_file(path, xi)
    assert np.array_equal(read_kernel_file(path), xi)


@pytest.mark.parametrize("body", ["", "m=3\n1", "n=2\n1 2 3", "n=2\n" + "x " * 16, "n=99\n1"])
def test_kernel_file_rejects_malformed(tmp_path, body):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(KernelError):
        read_kernel_file(path)


def test_kernel_checks():
    with pytest.raises(KernelError):
        normalize(np.zeros((3, 3, 3)))
    with pytest.raises(KernelError):
        normalize(np.full((2, 2, 2, 2), math.nan))
    with pytest.raises(ValueError):
        check_permutation([0, 0, 1])
    with pytest.raises(ValueError):
        check_permutation([0, 1, 2], n=4)
