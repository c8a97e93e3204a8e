import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenode.series_core import (
    ConjugacyMap,
    MultiSeries,
    OrderMismatchError,
    PolyVectorField,
    SubstitutionDomainError,
    UniSeries,
    compose_fibered,
    exp_flow_inverse_time,
    exp_flow_map,
    lie_derivative,
    resonant_split,
)

K, D = 5, 4
cplx = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def _random(seed, K=K, D=D, zero_const=False, scale=1.0):
    rng = np.random.default_rng(seed)
    s = MultiSeries.from_function(lambda m, a, b: scale * complex(rng.normal(), rng.normal()), K, D)
    if zero_const:
        s = s - s.constant_term()
    return s


seeds = st.integers(0, 10_000)


@settings(max_examples=25, deadline=None)
@given(seeds, seeds)
def test_product_is_commutative(s1, s2):
    f, g = _random(s1), _random(s2)
    assert (f * g).allclose(g * f, 1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, cplx)
def test_pointwise_product(seed, x):
    # truncation only drops high-order terms; evaluate at tiny y to compare
    f, g = _random(seed), _random(seed + 1)
    x, y1, y2 = 1e-4 * x, 1e-4, -2e-4
    assert abs((f * g)(x, y1, y2) - f(x, y1, y2) * g(x, y1, y2)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_reciprocal(seed):
    f = _random(seed, scale=0.3) + 1.0
    assert (f * f.reciprocal() - 1.0).max_abs() < 1e-10


def test_reciprocal_needs_unit():
    with pytest.raises(Exception):
        MultiSeries.x(K, D).reciprocal()


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_exp_log_derivative(seed):
    f = _random(seed, zero_const=True, scale=0.3)
    e = f.exp()
    # d/dy1 exp(f) = f_y1 exp(f)
    assert (e.deriv_y1() - f.deriv_y1() * e).with_orders(K, D - 1).max_abs() < 1e-10


def test_order_mismatch():
    with pytest.raises(OrderMismatchError):
        MultiSeries.zeros(3, 2) + MultiSeries.zeros(4, 2)


def test_mul_x_roundtrip():
    f = _random(1).truncate_x(K - 2)
    assert f.mul_x(2).mul_x(-2).allclose(f, 1e-14)


def test_resonant_split():
    f = _random(3)
    res, non = resonant_split(f)
    assert (res + non).allclose(f, 1e-14)
    for k in res.coeffs:
        assert k.n1 == k.n2
    for k in non.coeffs:
        assert k.n1 != k.n2


def test_compose_with_identity():
    f = _random(4)
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    assert compose_fibered(f, y1, y2).allclose(f, 1e-13)


def test_compose_rejects_constant():
    f = _random(4)
    with pytest.raises(SubstitutionDomainError):
        compose_fibered(f, MultiSeries.y1(K, D) + 1.0, MultiSeries.y2(K, D))


def test_lie_derivative_is_derivation():
    V = PolyVectorField(MultiSeries.x(K, D) ** 2, MultiSeries.y1(K, D), -MultiSeries.y2(K, D))
    f, g = _random(5), _random(6)
    lhs = lie_derivative(V, f * g)
    rhs = lie_derivative(V, f) * g + f * lie_derivative(V, g)
    assert lhs.allclose(rhs, 1e-10, x_below=K - 1)


def test_map_inverse():
    phi = ConjugacyMap(
        MultiSeries.y1(K, D) + 0.3 * MultiSeries.monomial(1, 2, 0, K, D),
        MultiSeries.y2(K, D) - 0.2 * MultiSeries.monomial(0, 1, 1, K, D),
    )
    ident = phi.compose(phi.inverse())
    assert ident.comp_y1.allclose(MultiSeries.y1(K, D), 1e-10)
    assert ident.comp_y2.allclose(MultiSeries.y2(K, D), 1e-10)


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_flow_inverse_time(seed):
    tau = _random(seed, zero_const=True, scale=0.2)
    for w in ((1, 1), (-1, 1)):
        s = exp_flow_inverse_time(tau, w)
        ident = exp_flow_map(tau, w).compose(exp_flow_map(s, w))
        assert ident.comp_y1.allclose(MultiSeries.y1(K, D), 1e-9)


def test_uni_series_basics():
    u = UniSeries([1.0, 2.0, 3.0])
    assert (u * u.reciprocal()).allclose(UniSeries([1.0, 0.0, 0.0]))
    assert u.deriv().integral().allclose(UniSeries([0.0, 2.0, 3.0]))
    assert UniSeries([0.0, 1.0, 0.0, 0.0]).exp()[3] == pytest.approx(1 / 6)


def test_json_roundtrip():
    f = _random(8)
    assert MultiSeries.from_json_dict(f.to_json_dict()).allclose(f, 0.0)
