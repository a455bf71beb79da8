import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, simpson

from intrl.errors import DimensionError, DomainError, IllConditionedKernelError
from intrl.quadrature import (MaternKernel, QuadratureRule, WienerKernel, apply_rule, bq_rule,
                              even_instants, gram, kernel_double_mean, kernel_eval, kernel_mean,
                              trapezoid_rule, worst_case_error)


def simpson_mean(k, a, b, t, n=1_000_001):
    s = np.linspace(a, b, n)
    return simpson(kernel_eval(k, s, t), x=s)


# -- trapezoid ----------------------------------------------------------------

def test_trapezoid_weights():
    np.testing.assert_allclose(trapezoid_rule([0, 0.5, 1]).weights, [0.25, 0.5, 0.25])
    np.testing.assert_allclose(trapezoid_rule([0, 1]).weights, [0.5, 0.5])


def test_trapezoid_even_variance():
    assert trapezoid_rule(even_instants(0, 1, 3)).posterior_variance == pytest.approx(1 / 48, abs=1e-15)
    for n in (5, 9, 15):
        dt = 0.1
        expected = dt ** 3 / (12 * (n - 1) ** 2)
        assert abs(trapezoid_rule(even_instants(0, dt, n)).posterior_variance - expected) < 1e-15


def test_trapezoid_arity():
    with pytest.raises(DimensionError):
        trapezoid_rule([0.0])


def test_rule_validation():
    with pytest.raises(DomainError):
        QuadratureRule([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DimensionError):
        QuadratureRule([0.0, 1.0], [1.0])


# -- kernels ------------------------------------------------------------------

@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 3.5])
def test_matern_zero_distance(nu):
    assert kernel_eval(MaternKernel(nu, 0.7, 2.0), 1.3, 1.3) == 2.0


def test_kernel_closed_forms():
    assert kernel_eval(WienerKernel(0.0), 1.0, 2.0) == 1.0
    assert kernel_eval(MaternKernel(0.5, 1.0, 1.0), 0.0, 1.0) == pytest.approx(math.exp(-1), abs=1e-15)
    r = 0.4
    a = math.sqrt(3) * r
    assert kernel_eval(MaternKernel(1.5, 1.0), 0.0, r) == pytest.approx((1 + a) * math.exp(-a))
    a = math.sqrt(7) * r
    expected = (1 + a + 2 * a * a / 5 + a ** 3 / 15) * math.exp(-a)
    assert kernel_eval(MaternKernel(3.5, 1.0), 0.0, r) == pytest.approx(expected)


def test_wiener_domain():
    with pytest.raises(DomainError):
        kernel_eval(WienerKernel(0.0), 0.0, 1.0)
    with pytest.raises(DomainError):
        bq_rule(WienerKernel(0.0), [0.0, 1.0])


@pytest.mark.parametrize("kw", [dict(nu=1.0), dict(rho=0.0), dict(sigma2=-1.0)])
def test_matern_validation(kw):
    with pytest.raises(DomainError):
        MaternKernel(**kw)


@pytest.mark.parametrize("k", [WienerKernel(-0.5), MaternKernel(1.5, 0.3), MaternKernel(3.5, 2.0)])
def test_gram_symmetric_psd(k, rng):
    t = np.sort(rng.uniform(0, 1, 12))
    K = gram(k, t)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-9


# -- kernel means -------------------------------------------------------------

def test_kernel_mean_examples():
    assert kernel_mean(WienerKernel(0.0), (0.0, 1.0), 1.0) == pytest.approx(0.5, abs=1e-15)
    assert kernel_mean(MaternKernel(0.5, 1.0), (0.0, 1.0), 0.0) == pytest.approx(1 - math.exp(-1), abs=1e-14)


@pytest.mark.parametrize("k", [MaternKernel(3.5, 1.0), MaternKernel(1.5, 0.2, 3.0), WienerKernel(-0.3)])
@pytest.mark.parametrize("t", [0.0, 0.37, 1.0])
def test_kernel_mean_against_simpson(k, t):
    ref = simpson_mean(k, 0.0, 1.0, t)
    assert abs(kernel_mean(k, (0.0, 1.0), t) - ref) < 1e-9
    assert abs(kernel_mean(k, (0.0, 1.0), t, method="numeric") - ref) < 1e-9


def test_kernel_mean_outside_interval():
    with pytest.raises(DomainError):
        kernel_mean(MaternKernel(), (0.0, 1.0), 1.5)


@pytest.mark.parametrize("k", [MaternKernel(3.5, 0.5), MaternKernel(0.5, 2.0), WienerKernel(-1.0)])
def test_double_mean_against_dblquad(k):
    # Integrate over the triangle s < s' where the kernel is smooth, then double.
    half, _ = dblquad(lambda s, s2: kernel_eval(k, s, s2), 0.0, 1.0, 0.0, lambda s2: s2,
                      epsabs=1e-13, epsrel=1e-13)
    assert kernel_double_mean(k, (0.0, 1.0)) == pytest.approx(2 * half, rel=1e-10)


# -- BQ -----------------------------------------------------------------------

def test_wiener_bq_is_trapezoid_even():
    t = even_instants(0.0, 1.0, 7)
    bq = bq_rule(WienerKernel(-1.0), t)
    np.testing.assert_allclose(bq.weights, trapezoid_rule(t).weights, atol=1e-12)
    assert bq.posterior_variance == pytest.approx(1 / (12 * 36), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=14, unique=True),
       st.floats(0.01, 5.0))
def test_wiener_bq_is_trapezoid_uneven(points, gap):
    t = np.sort(points)
    if np.min(np.diff(t)) < 1e-3:
        return
    bq = bq_rule(WienerKernel(t[0] - gap), t)
    tr = trapezoid_rule(t)
    np.testing.assert_allclose(bq.weights, tr.weights, atol=1e-9)
    assert abs(bq.posterior_variance - tr.posterior_variance) < 1e-10


def test_single_panel_matern_symmetric():
    w = bq_rule(MaternKernel(2.5, 0.5), [0.0, 1.0]).weights
    assert w[0] == pytest.approx(w[1], rel=1e-12)


def test_matern_weights_sum_close_to_length():
    rule = bq_rule(MaternKernel(3.5, 0.1), even_instants(0.0, 0.1, 11))
    assert abs(rule.weights.sum() - 0.1) < 1e-6


def test_posterior_variance_information_gain():
    k = MaternKernel(3.5, 8.0)
    v10 = bq_rule(k, even_instants(2, 10, 10)).posterior_variance
    v4 = bq_rule(k, even_instants(2, 10, 4)).posterior_variance
    assert v10 < v4


@pytest.mark.parametrize("nu", [1.5, 3.5])
def test_variance_nonincreasing_on_nested_sets(nu):
    k = MaternKernel(nu, 1.0)
    # Nested dyadic refinements of [0, 1].
    vs = [bq_rule(k, even_instants(0, 1, 2 ** j + 1)).posterior_variance for j in range(1, 5)]
    assert all(b <= a + 1e-15 for a, b in zip(vs, vs[1:]))


def test_ill_conditioned_gram(monkeypatch):
    import intrl.quadrature as q
    monkeypatch.setattr(q, "JITTER_LEVELS", (0.0,))
    with pytest.raises(IllConditionedKernelError):
        bq_rule(MaternKernel(3.5, 100.0), even_instants(0.0, 1e-3, 15))


# -- apply / worst-case error -------------------------------------------------

def test_apply_rule():
    assert apply_rule(trapezoid_rule(even_instants(0, 2, 5)), np.full(5, 3.0)) == pytest.approx(6.0)
    t = even_instants(0, 1, 3)
    assert apply_rule(trapezoid_rule(t), t) == 0.5
    with pytest.raises(DimensionError):
        apply_rule(trapezoid_rule(t), [1.0, 2.0])


def test_apply_rule_keeps_trailing_axes():
    rule = trapezoid_rule(even_instants(0, 1, 4))
    vals = np.ones((4, 3))
    np.testing.assert_allclose(apply_rule(rule, vals), [1.0, 1.0, 1.0])


def test_bq_demo_improves_with_n():
    from intrl.experiments import demo_integrand
    k = MaternKernel(3.5, 8.0)
    errs = []
    for n in (4, 10):
        t = even_instants(2, 10, n)
        errs.append(abs(apply_rule(bq_rule(k, t), demo_integrand(t)) - 15.400187236529653))
    assert errs[1] < errs[0]


@pytest.mark.parametrize("k", [MaternKernel(3.5, 0.1), MaternKernel(1.5, 0.1), WienerKernel(-1.0)])
def test_bq_worst_case_equals_posterior_std(k):
    for n in (3, 6, 11):
        rule = bq_rule(k, even_instants(0.0, 0.1, n))
        assert abs(worst_case_error(rule, k) - rule.posterior_std) < 1e-8


def test_trapezoid_worst_case_under_wiener():
    for n in (3, 5, 9):
        rule = trapezoid_rule(even_instants(0.0, 1.0, n))
        assert worst_case_error(rule, WienerKernel(-1.0)) == pytest.approx(
            math.sqrt(1.0 / (12 * (n - 1) ** 2)), rel=1e-8)


def test_bq_beats_trapezoid_under_matern():
    k = MaternKernel(3.5, 0.1)
    for n in range(5, 16):
        t = even_instants(0.0, 0.1, n)
        assert worst_case_error(bq_rule(k, t), k) <= worst_case_error(trapezoid_rule(t), k)


def test_bq_optimal_against_perturbations(rng):
    k = MaternKernel(3.5, 1.0)
    rule = bq_rule(k, even_instants(0.0, 1.0, 8))
    best = worst_case_error(rule, k)
    for _ in range(100):
        w = rule.weights + rng.normal(scale=1e-3, size=rule.n)
        assert best <= worst_case_error(QuadratureRule(rule.instants, w), k)


def loglog_slope(ns, vals):
    return np.polyfit(np.log(ns), np.log(vals), 1)[0]


def test_posterior_variance_decay_rates():
    ns = np.arange(5, 16)
    dt = 0.1
    trap = [trapezoid_rule(even_instants(0, dt, n)).posterior_variance for n in ns]
    k = MaternKernel(3.5, dt)
    bq = [bq_rule(k, even_instants(0, dt, n)).posterior_variance for n in ns]
    assert loglog_slope(ns, trap) <= -1.7
    assert loglog_slope(ns, bq) <= -3.0


def test_worst_case_error_decay_rates():
    ns = np.arange(5, 16)
    dt = 0.1
    w = WienerKernel(-1.0)
    trap = [worst_case_error(trapezoid_rule(even_instants(0, dt, n)), w) for n in ns]
    k = MaternKernel(3.5, dt)
    bq = [worst_case_error(bq_rule(k, even_instants(0, dt, n)), k) for n in ns]
    # Square root of an N^-2 variance.
    assert -1.3 <= loglog_slope(ns, trap) <= -0.8
    assert loglog_slope(ns, bq) <= -3.0
