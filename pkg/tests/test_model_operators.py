from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import poly1d_model
from ergostep.catalog import gauss_hermite_expectation, monomial1d, ou1d
from ergostep.innovations import InnovationDist
from ergostep.model import (
    InsufficientDerivativesError,
    InsufficientOrderError,
    MonteCarlo,
    directional_fd,
    drift_generator,
    generator_apply,
    generator_observable,
    linear_combination,
    m1_euler,
    m1_talay,
    m2_talay,
    sigma_tilde,
    talay_coupling,
    vf_operator,
)

OU = ou1d(1.0, math.sqrt(2.0))
TP = InnovationDist("three_point", 1)
X2 = monomial1d(2)


def x(v: float) -> np.ndarray:
    return np.array([v])


# ---------------------------------------------------------------------------
# generator and variance density


def test_generator_ou_quadratic():
    assert generator_apply(OU, X2, x(0.0)) == pytest.approx(2.0, abs=1e-14)
    assert generator_apply(OU, X2, x(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_generator_constant_observable():
    const = monomial1d(0)
    assert generator_apply(OU, const, x(1.7)) == 0.0


def test_generator_requires_order_two():
    low = linear_combination([1.0], [monomial1d(1)])
    lowered = type(low)(fn=low.fn, dirderiv=low.dirderiv, max_order=1)
    with pytest.raises(InsufficientOrderError):
        generator_apply(OU, lowered, x(0.0))


def test_vf_operator_values():
    assert vf_operator(OU, X2, x(1.0)) == pytest.approx(8.0, rel=1e-14)
    assert vf_operator(OU, X2, x(0.0)) == 0.0
    assert vf_operator(OU, monomial1d(0), x(2.0)) == 0.0


# ---------------------------------------------------------------------------
# derived fields


def test_sigma_tilde_ou_constant():
    for v in (-2.0, 0.0, 3.5):
        assert sigma_tilde(OU, x(v))[0, 0] == pytest.approx(-math.sqrt(2.0), rel=1e-14)


def test_sigma_tilde_constant_coefficients():
    m = poly1d_model([0.7], [1.3])
    assert sigma_tilde(m, x(2.0))[0, 0] == 0.0


def test_sigma_tilde_linear_diffusion_zero_drift():
    m = poly1d_model([0.0], [0.0, 1.0])  # b = 0, sigma = x
    assert sigma_tilde(m, x(1.0))[0, 0] == 0.0


def test_sigma_tilde_quadratic_diffusion():
    m = poly1d_model([0.0], [0.0, 0.0, 1.0])  # b = 0, sigma = x^2
    for v in (0.5, 1.0, 2.0):
        # only the Hessian contraction survives: (sigma sigma) * sigma'' = 2 x^4
        assert sigma_tilde(m, x(v))[0, 0] == pytest.approx(2.0 * v**4, rel=1e-13)


def test_sigma_tilde_fd_fallback_matches_analytic():
    analytic = poly1d_model([0.3, -1.0], [0.5, 0.2, 0.4])
    fd = poly1d_model([0.3, -1.0], [0.5, 0.2, 0.4], fd_only=True)
    for v in (-1.2, 0.4, 2.0):
        a = sigma_tilde(analytic, x(v))[0, 0]
        b = sigma_tilde(fd, x(v))[0, 0]
        assert b == pytest.approx(a, rel=2e-4, abs=2e-4)


def test_talay_coupling_halves_hessian_weight():
    m = poly1d_model([0.0], [0.0, 0.0, 1.0])
    # sigma_tilde has (sigma sigma^T : D^2 sigma); the step coupling carries 1/4
    assert talay_coupling(m, x(1.0))[0, 0] == pytest.approx(0.5, rel=1e-13)
    assert sigma_tilde(m, x(1.0))[0, 0] == pytest.approx(2.0, rel=1e-13)


def test_drift_generator_values():
    assert drift_generator(OU, x(2.0))[0] == pytest.approx(2.0, rel=1e-14)
    assert drift_generator(poly1d_model([4.2], [1.0]), x(3.0))[0] == 0.0
    lin = poly1d_model([-1.0, 2.0], [0.7])  # b = 2x - 1, sigma const
    for v in (-1.0, 0.0, 2.5):
        assert drift_generator(lin, x(v))[0] == pytest.approx(2.0 * (2.0 * v - 1.0), rel=1e-14)


# ---------------------------------------------------------------------------
# correction operators


def test_m1_euler_ou_quadratic():
    for v in (1.0, 0.0, -2.0):
        got = m1_euler(OU, X2, x(v), TP)
        assert got.value == pytest.approx(-v * v, abs=1e-13)
        assert got.stderr == 0.0


def test_m1_euler_linear_observable():
    assert m1_euler(OU, monomial1d(1), x(1.5), TP).value == 0.0


def test_m1_talay_ou_quadratic():
    for v in (1.0, 0.0, -1.7):
        got = m1_talay(OU, X2, x(v), TP)
        assert got.value == pytest.approx(-3.0 * v * v, abs=1e-12)


def test_m1_talay_constant_coefficients_closed_form():
    m = poly1d_model([0.8], [1.1])  # constant b and sigma: Ab = 0, Theta = 0
    f = linear_combination([2.0, -0.7], [monomial1d(2), monomial1d(1)])  # quadratic
    for v in (0.0, 1.0, -2.0):
        closed = -0.5 * float(f.d(x(v), 2, (m.b(x(v)), m.b(x(v)))))
        got = m1_talay(m, f, x(v), TP).value
        assert got == pytest.approx(closed, abs=1e-15)
        # the Euler defect coincides when every correction field vanishes
        assert m1_euler(m, f, x(v), TP).value == pytest.approx(closed, abs=1e-15)


def test_m2_talay_ou_quadratic_symbolic_cross_check():
    # termwise symbolic evaluation for the reference model gives 4x^2 + 2
    for v in (0.0, 1.0, -1.3, 2.2):
        got = m2_talay(OU, X2, x(v), TP)
        assert got.value == pytest.approx(4.0 * v * v + 2.0, abs=1e-12)


def test_m2_talay_constant_observable():
    assert m2_talay(OU, monomial1d(0), x(1.0), TP).value == 0.0


def test_m2_talay_linear_observable():
    # f = x: only the generator-composed part survives; for the reference
    # model A f = -x, so m1(Af) = -(D(Af); Ab) = x
    for v in (0.5, -2.0):
        got = m2_talay(OU, monomial1d(1), x(v), TP)
        assert got.value == pytest.approx(v, abs=1e-13)


def test_operator_linearity():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=2)
    f = linear_combination(rng.normal(size=3), [monomial1d(k) for k in (2, 3, 4)])
    g = linear_combination(rng.normal(size=3), [monomial1d(k) for k in (1, 2, 6)])
    comb = linear_combination([a, b], [f, g])
    pt = x(0.8)
    for op in (
        lambda h: generator_apply(OU, h, pt),
        lambda h: m1_euler(OU, h, pt, TP).value,
        lambda h: m1_talay(OU, h, pt, TP).value,
        lambda h: m2_talay(OU, h, pt, TP).value,
    ):
        assert op(comb) == pytest.approx(a * op(f) + b * op(g), rel=1e-10, abs=1e-10)


def test_mc_quadrature_within_four_se_of_enumeration():
    f = monomial1d(4)
    en = m1_euler(OU, f, x(1.3), TP).value
    mc = m1_euler(OU, f, x(1.3), TP, MonteCarlo(10**6, seed=11))
    assert mc.stderr > 0
    assert abs(mc.value - en) <= 4.0 * mc.stderr

    en2 = m2_talay(OU, f, x(0.7), TP).value
    mc2 = m2_talay(OU, f, x(0.7), TP, MonteCarlo(10**6, seed=12))
    assert abs(mc2.value - en2) <= 4.0 * mc2.stderr


def test_mc_zero_samples_rejected():
    with pytest.raises(ValueError):
        MonteCarlo(0)


def test_m1_requires_order_four():
    low = monomial1d(2)
    lowered = type(low)(fn=low.fn, dirderiv=low.dirderiv, max_order=3)
    with pytest.raises(InsufficientOrderError):
        m1_euler(OU, lowered, x(1.0), TP)


# ---------------------------------------------------------------------------
# invariance identity and derivative consistency


@pytest.mark.parametrize("k", range(7))
def test_invariant_average_of_generator_vanishes(k):
    # Gauss-Hermite integral of A f under N(0, 1) for polynomial f
    f = monomial1d(k)
    val = gauss_hermite_expectation(lambda xv: float(generator_apply(OU, f, xv)))
    assert abs(val) <= 1e-8


@pytest.mark.parametrize("k", range(1, 7))
def test_dirderiv_matches_finite_differences(k):
    rng = np.random.default_rng(99)
    f = monomial1d(k)
    for _ in range(5):
        pt = rng.uniform(-3, 3, size=1)
        v = rng.normal(size=1)
        analytic = f.d(pt, 1, (v,))
        fd = directional_fd(f.fn, pt, (v,), h=1e-4)
        assert fd == pytest.approx(analytic, rel=1e-4, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(order=st.integers(2, 4), seed=st.integers(0, 10**6))
def test_dirderiv_symmetric_in_directions(order, seed):
    rng = np.random.default_rng(seed)
    f = monomial1d(6)
    pt = rng.uniform(-2, 2, size=1)
    dirs = [rng.normal(size=1) for _ in range(order)]
    base = f.d(pt, order, tuple(dirs))
    perm = rng.permutation(order)
    assert f.d(pt, order, tuple(dirs[i] for i in perm)) == pytest.approx(base, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# the generator as an observable


def test_generator_observable_values_and_derivatives():
    f = monomial1d(4)
    af = generator_observable(OU, f)
    pt = x(1.0)
    # A x^4 = -4x^4 + 12 x^2
    assert af.fn(pt) == pytest.approx(8.0, rel=1e-13)
    # A^2 x^4 = 16x^4 - 72x^2 + 24
    assert generator_apply(OU, af, pt) == pytest.approx(-32.0, rel=1e-12)
    v = np.array([1.0])
    fd = directional_fd(af.fn, pt, (v,), h=1e-5)
    assert af.d(pt, 1, (v,)) == pytest.approx(fd, rel=1e-6)


def test_generator_observable_max_order():
    af = generator_observable(OU, monomial1d(6))
    assert af.max_order == 4
    with pytest.raises(InsufficientOrderError):
        af.d(x(0.0), 5, tuple(np.ones((5, 1))))


def test_generator_observable_refuses_fd_models():
    fd_model = poly1d_model([0.0, -1.0], [1.0], fd_only=True)
    with pytest.raises(InsufficientDerivativesError):
        generator_observable(fd_model, monomial1d(4))


def test_m2_with_supplied_af():
    f = monomial1d(2)
    af = generator_observable(OU, f)
    got = m2_talay(OU, f, x(1.0), TP, af=af)
    assert got.value == pytest.approx(6.0, abs=1e-12)


def test_analytic_derivatives_match_finite_differences():
    analytic = poly1d_model([0.4, -1.2, 0.3], [0.9, 0.1, 0.2])
    fd = poly1d_model([0.4, -1.2, 0.3], [0.9, 0.1, 0.2], fd_only=True)
    for v in (-2.0, 0.3, 1.7):
        pt = x(v)
        assert fd.drift_jacobian(pt) == pytest.approx(analytic.drift_jacobian(pt), rel=1e-6, abs=1e-8)
        assert fd.drift_hessian(pt) == pytest.approx(analytic.drift_hessian(pt), rel=1e-4, abs=1e-5)
        assert fd.diffusion_jacobian(pt) == pytest.approx(analytic.diffusion_jacobian(pt), rel=1e-6, abs=1e-8)
        assert fd.diffusion_hessian(pt) == pytest.approx(analytic.diffusion_hessian(pt), rel=1e-4, abs=1e-5)


def test_fd_fallback_disabled_raises():
    m = poly1d_model([0.0, -1.0], [1.0], fd_only=True)
    frozen = type(m)(dim=1, noise_dim=1, b=m.b, sigma=m.sigma, fd_fallback=False)
    with pytest.raises(InsufficientDerivativesError):
        frozen.drift_jacobian(x(1.0))


def test_m2_talay_double_well_quadrature_consistency():
    # nonzero third drift derivative exercises the higher-order tensor path
    from ergostep.catalog import double_well

    m = double_well(math.sqrt(2.0))
    f = monomial1d(2)
    en = m2_talay(m, f, x(0.6), TP).value
    mc = m2_talay(m, f, x(0.6), TP, MonteCarlo(200_000, seed=21))
    assert mc.stderr > 0
    assert abs(mc.value - en) <= 4.0 * mc.stderr
    # linearity holds on the double-well generator too
    g = linear_combination([0.5, 1.5], [monomial1d(2), monomial1d(1)])
    lhs = m2_talay(m, g, x(0.6), TP).value
    rhs = 0.5 * en + 1.5 * m2_talay(m, monomial1d(1), x(0.6), TP).value
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
