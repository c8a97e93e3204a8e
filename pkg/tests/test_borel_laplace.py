import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenode.borel_laplace import (
    BorelSeries,
    DirectionBlocked,
    InsufficientData,
    ResonanceError,
    WeightedNormParams,
    borel,
    borel_pade_laplace,
    borel_product,
    convolve,
    fact_inequality_margin,
    gevrey_estimate,
    inverse_borel,
    irregular_ode_residual,
    laplace_sum,
    pade_continue,
    solve_irregular_ode,
    solve_regular_ode,
    weighted_norm,
)
from saddlenode.series_core import UniSeries

coeffs = st.lists(
    st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False), min_size=2, max_size=8
)


@settings(max_examples=30, deadline=None)
@given(coeffs, coeffs)
def test_convolution_theorem(f, g):
    n = len(f) + len(g)
    F = UniSeries(f + [0] * (n - len(f)))
    G = UniSeries(g + [0] * (n - len(g)))
    lhs = borel(F * G).coeffs
    rhs = borel_product(F, G).coeffs
    m = min(len(lhs), len(rhs))
    assert np.allclose(lhs[:m], rhs[:m], atol=1e-10, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(coeffs)
def test_borel_roundtrip(f):
    for kind in ("B", "B_bis"):
        assert np.allclose(inverse_borel(borel(f, kind)).c, np.asarray(f, dtype=complex))


def test_convolution_of_constants():
    one = BorelSeries(np.array([1.0 + 0j]))
    assert np.allclose(convolve(one, one).coeffs[:2], [0.0, 1.0])


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_fact_inequality(beta):
    assert min(fact_inequality_margin(beta, t) for t in np.linspace(0.0, 10.0, 41)) >= 0


def test_laplace_roundtrip_convergent():
    f = UniSeries([0.5**k for k in range(30)])
    x = 0.3
    direct = sum(0.5**k * x**k for k in range(30))
    value = laplace_sum(borel(f), 0.0, x)
    assert abs(value - direct) < 1e-8


def test_euler_recursion_and_blocked_ray():
    a = solve_irregular_ode(UniSeries.monomial(1, 16), 1.0)
    assert a.c[5] == 24.0  # (-1)^4 4!
    with pytest.raises(DirectionBlocked):
        borel_pade_laplace(a, math.pi, -0.1)


def test_euler_sum_on_regular_ray():
    # Euler's function: sum_n (-1)^(n-1) (n-1)! x^n = int_0^inf e^{-t/x} / (1 + t) dt
    a = solve_irregular_ode(UniSeries.monomial(1, 16), 1.0)
    value, _ = borel_pade_laplace(a, 0.0, 0.1)
    from scipy import integrate

    ref, _ = integrate.quad(lambda t: math.exp(-t / 0.1) / (1 + t), 0, np.inf)
    assert abs(value - ref) < 1e-9


@settings(max_examples=20, deadline=None)
@given(coeffs, st.complex_numbers(min_magnitude=0.5, max_magnitude=3), st.floats(-0.5, 0.5))
def test_irregular_residual(b, k, alpha):
    a = solve_irregular_ode(b, k, alpha)
    r = irregular_ode_residual(a, k, alpha)
    assert np.allclose(r.c, np.asarray(b, dtype=complex), atol=1e-8 * max(1.0, np.max(np.abs(a.c))))


def test_regular_ode():
    a = solve_regular_ode(UniSeries.monomial(3, 5), 1.0)
    assert a.c[3] == pytest.approx(0.25)
    assert solve_regular_ode([1.0], 2.0).c[0] == pytest.approx(0.5)
    with pytest.raises(ResonanceError):
        solve_regular_ode([0.0, 1.0, 0.0], -2.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_regular_ode_norm_bound(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=6) + 1j * rng.normal(size=6)
    k = complex(rng.uniform(0.5, 2.0), rng.uniform(-1, 1))
    P = WeightedNormParams(1.0)
    na = weighted_norm(solve_regular_ode(b, k), P, kind="plain", continuation="polynomial").value
    nb = weighted_norm(UniSeries(b), P, kind="plain", continuation="polynomial").value
    assert na <= nb / k.real * (1 + 1e-9)


def test_pade_recovers_rational():
    g = BorelSeries(np.array([(-1.0) ** k for k in range(12)], dtype=complex))
    p = pade_continue(g)
    assert np.allclose(p(np.array([0.5, 2.0])), 1 / (1 + np.array([0.5, 2.0])))


def test_gevrey_classification():
    euler = [math.factorial(k) * (-1) ** k for k in range(16)]
    assert gevrey_estimate(euler).classification == "gevrey-1"
    assert gevrey_estimate([2.0**k for k in range(16)]).classification == "convergent"
    assert gevrey_estimate([0.0] * 10).classification == "convergent"
    with pytest.raises(InsufficientData):
        gevrey_estimate([1.0, 2.0])
