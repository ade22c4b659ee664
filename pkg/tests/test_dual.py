import math

import numpy as np
import pytest
from scipy import integrate, stats

from mfsbm.dual import (DualPath, GaussianFunctional, coalesce, dual_extrapolate, dual_moment_estimate,
                        heat_evolve, pair_with_initial, simulate_dual_path, _uniform_pairs)
from mfsbm.errors import CapacityError, DomainError, NumericError
from mfsbm.kernels import Bump, GaussianMixture, heat_kernel
from mfsbm.moments import MCParams, classical_second_moment, moment_formula_mc

UNIT = GaussianMixture((1.0,), (0.0,), (1.0,))


def random_functional(rng, k, batch=1):
    a = rng.normal(size=(batch, k, k))
    cov = a @ np.swapaxes(a, 1, 2) + 0.5 * np.eye(k)
    return GaussianFunctional(rng.normal(size=batch), rng.normal(size=(batch, k)), cov)


def test_coalesce_is_restriction_to_diagonal():
    rng = np.random.default_rng(0)
    for k in (2, 3, 4):
        f = random_functional(rng, k)
        for i in range(k):
            for j in range(i + 1, k):
                g = coalesce(f, i, j)
                y = rng.normal(size=(100, k - 1))
                full = np.insert(y, j, y[:, i], axis=1)
                np.testing.assert_allclose(g.evaluate(y), f.evaluate(full), rtol=1e-12, atol=0)


def test_coalesce_batches_with_different_pairs():
    rng = np.random.default_rng(1)
    f = random_functional(rng, 3, batch=4)
    i, j = np.array([0, 0, 1, 0]), np.array([1, 2, 2, 1])
    g = coalesce(f, i, j)
    for b in range(4):
        one = coalesce(f.subset([b]), i[b], j[b])
        np.testing.assert_allclose(g.log_mass[b], one.log_mass[0], rtol=1e-13)
        np.testing.assert_allclose(g.cov[b], one.cov[0], rtol=1e-13)


def test_coalesce_squared_kernel():
    d, x = 0.1, 0.4
    g = coalesce(GaussianFunctional.kernel_product(2, x, d), 0, 1)
    assert g.dim == 1
    assert g.cov[0, 0, 0] == pytest.approx(d / 2)
    assert math.exp(g.log_mass[0]) == pytest.approx((4 * math.pi * d) ** -0.5)
    y = np.linspace(-1, 1, 7)[:, None]
    np.testing.assert_allclose(g.evaluate(y), heat_kernel(d, x - y[:, 0]) ** 2, rtol=1e-12)


def test_coalesce_errors():
    with pytest.raises(DomainError):
        coalesce(GaussianFunctional.kernel_product(1, 0.0, 0.1), 0, 1)
    with pytest.raises(DomainError):
        coalesce(GaussianFunctional.kernel_product(3, 0.0, 0.1), 2, 1)
    bad = GaussianFunctional(np.zeros(1), np.zeros((1, 2)), np.array([[[1.0, 1.0], [1.0, 1.0 + 1e-14]]]))
    with pytest.raises(NumericError) as info:
        coalesce(bad, 0, 1)
    assert info.value.detail["condition"] > 1e12


def test_heat_evolve():
    f = GaussianFunctional.kernel_product(2, 0.3, 0.1)
    same = heat_evolve(f, 0.0)
    assert np.array_equal(same.cov, f.cov) and np.array_equal(same.mean, f.mean)
    assert np.array_equal(heat_evolve(heat_evolve(f, 0.25), 0.5).cov, heat_evolve(f, 0.75).cov)
    g = heat_evolve(GaussianFunctional.kernel_product(1, 0.3, 0.1), 0.9)
    y = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(g.evaluate(y[:, None]), heat_kernel(1.0, 0.3 - y), rtol=1e-12)
    with pytest.raises(DomainError):
        heat_evolve(f, -0.1)


def test_mixture_pairing_matches_quadrature():
    init = GaussianMixture((0.4, 0.6), (-0.5, 1.0), (0.3, 0.9))
    f = random_functional(np.random.default_rng(2), 2)
    oracle, _ = integrate.dblquad(lambda y, z: f.evaluate([[y, z]])[0] * init.density(y) * init.density(z),
                                  -12, 12, -12, 12, epsabs=1e-13)
    assert pair_with_initial(f, init)[0] == pytest.approx(oracle, rel=1e-9)


def test_bump_pairing_matches_quadrature():
    bump = Bump(0.0, 1.0, 1.0)
    f = heat_evolve(GaussianFunctional.kernel_product(2, 0.3, 0.05), 0.3)
    oracle, _ = integrate.dblquad(lambda y, z: f.evaluate([[y, z]])[0] * bump.density(y) * bump.density(z),
                                  -1, 1, -1, 1, epsabs=1e-12)
    assert pair_with_initial(f, bump)[0] == pytest.approx(oracle, rel=1e-5)
    with pytest.raises(CapacityError):
        pair_with_initial(GaussianFunctional.kernel_product(4, 0.0, 0.1), bump)


def test_dual_path_structure():
    rng = np.random.default_rng(3)
    assert simulate_dual_path(1, 100.0, rng).jump_times == []
    for _ in range(200):
        p = simulate_dual_path(5, 1.0, rng)
        counts = p.counts()
        assert all(a - b == 1 for a, b in zip(counts, counts[1:]))
        assert counts[-1] >= 1 and all(0 < t < 1 for t in p.jump_times)
        assert p.jump_times == sorted(p.jump_times)
        assert all(0 <= i < j < k for (i, j), k in zip(p.pairs, counts))
    assert DualPath(2, [], [], 0.7).weight_exponent() == pytest.approx(0.7)
    assert DualPath(3, [0.2], [(0, 1)], 1.0).weight_exponent() == pytest.approx(3 * 0.2 + 0.8)


def test_two_variable_jump_time_is_unit_exponential():
    rng = np.random.default_rng(4)
    times = np.array([simulate_dual_path(2, np.inf, rng).jump_times[0] for _ in range(100000)])
    se = times.std(ddof=1) / math.sqrt(len(times))
    assert abs(times.mean() - 1.0) < 3 * se
    assert stats.kstest(times, "expon").pvalue > 0.01


def test_three_variable_jump_counts():
    # pure-death chain 3 -> 2 -> 1 with rates 3 and 1
    t = 0.6
    p0 = math.exp(-3 * t)
    p1 = 1.5 * (math.exp(-t) - math.exp(-3 * t))
    expected = np.array([p0, p1, 1 - p0 - p1])
    rng = np.random.default_rng(5)
    m = 40000
    observed = np.bincount([len(simulate_dual_path(3, t, rng).jump_times) for _ in range(m)], minlength=3)
    assert stats.chisquare(observed, m * expected).pvalue > 0.01


def test_pairs_are_uniform():
    rng = np.random.default_rng(6)
    i, j = _uniform_pairs(rng, 4, 60000)
    assert np.all(i < j)
    observed = np.bincount(4 * i + j, minlength=16)[[1, 2, 3, 6, 7, 11]]
    assert stats.chisquare(observed).pvalue > 0.01


@pytest.mark.parametrize("method", ["conditioned", "plain"])
def test_first_order_and_zero_coefficient_are_exact(method):
    t, x, d = 0.8, 0.3, 0.05
    one = dual_moment_estimate(1, t, x, d, 1.0, UNIT, 1000, method=method)
    assert one.estimate == pytest.approx(UNIT.convolve(t + d, x), rel=1e-12)
    assert one.std_error < 1e-12
    if method == "conditioned":
        zero = dual_moment_estimate(3, t, x, d, 0.0, UNIT, 1000, method=method)
        assert zero.estimate == pytest.approx(UNIT.convolve(t + d, x) ** 3, rel=1e-12)
        assert zero.std_error < 1e-12


def test_plain_and_conditioned_agree():
    a = dual_moment_estimate(3, 1.0, 0.0, 0.02, 1.0, UNIT, 100000, seed=1, method="conditioned")
    b = dual_moment_estimate(3, 1.0, 0.0, 0.02, 1.0, UNIT, 100000, seed=2, method="plain")
    assert abs(a.estimate - b.estimate) < 3 * math.hypot(a.std_error, b.std_error)
    assert a.std_error < b.std_error
    assert a.mean_jumps == pytest.approx(b.mean_jumps, rel=0.02)


@pytest.mark.parametrize("x", [0.0, 1.0])
def test_second_moment_matches_smoothed_classical(x):
    r = dual_moment_estimate(2, 1.0, x, 0.02, 1.0, UNIT, 50000, seed=3)
    assert abs(r.estimate - classical_second_moment(1.0, x, 1.0, UNIT, delta=0.02)) < 3 * r.std_error


def test_third_moment_matches_formula():
    d = dual_moment_estimate(3, 1.0, 0.5, 0.02, 1.0, UNIT, 50000, seed=4)
    f = moment_formula_mc(3, 1.0, 0.5, UNIT, 1.0, MCParams(40000, seed=4), delta=0.02)
    assert abs(d.estimate - f.estimate) < 3 * math.hypot(d.std_error, f.std_error)


def test_bump_initial_density():
    bump = Bump(0.0, 1.0, 1.0)
    d = dual_moment_estimate(2, 0.5, 0.0, 0.05, 1.0, bump, 4000, seed=5)
    exact = classical_second_moment(0.5, 0.0, 1.0, bump, delta=0.05, tol=1e-9)
    assert abs(d.estimate - exact) < 3 * d.std_error


def test_extrapolation_to_zero_width():
    r = dual_extrapolate(2, 1.0, 0.0, 1.0, UNIT, replicas=50000, seed=6)
    assert abs(r.estimate - classical_second_moment(1.0, 0.0, 1.0, UNIT)) < 3 * r.std_error


def test_estimate_errors_and_determinism():
    with pytest.raises(DomainError):
        dual_moment_estimate(2, 1.0, 0.0, 0.0, 1.0, UNIT)
    with pytest.raises(DomainError):
        dual_moment_estimate(2, 1.0, 0.0, 0.1, 1.0, UNIT, method="exact")
    a = dual_moment_estimate(3, 1.0, 0.0, 0.1, 1.0, UNIT, 3000, seed=8)
    b = dual_moment_estimate(3, 1.0, 0.0, 0.1, 1.0, UNIT, 3000, seed=8)
    assert a.estimate == b.estimate
