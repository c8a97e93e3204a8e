import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenode.formal_normalization import run_pipeline
from saddlenode.saddle_node import random_saddle_node
from saddlenode.sectorial import (
    GeometryError,
    SectorGeometry,
    SectorialField,
    StabilityViolation,
    build_sectorial_maps,
    check_smallness,
    critical_time_bound,
    decay_bound_violation,
    domain_membership,
    fit_flatness,
    formal_homological,
    homological_path_integral,
    integrate_flow,
    lie_residual,
    model_solution,
    perturbation_margin,
    rotate_series,
    sample_omega,
)
from saddlenode.series_core import MultiSeries


@pytest.fixture(scope="module")
def prepared():
    res = run_pipeline(random_saddle_node(3, 8, 6), 3)
    d = res.data
    fld = SectorialField.from_prepared(d.lam, d.a1, d.a2, res.D, res.R)
    return fld, SectorGeometry.auto(fld.a, fld=fld)


def test_auto_geometry_is_admissible():
    g = SectorGeometry.auto(1.0 + 0.5j)
    assert g.violations() == []
    assert 0 < g.r_prime < g.r


@pytest.mark.parametrize("field,value", [("omega", 1.2), ("delta", 5.0), ("epsilon", 2.0)])
def test_geometry_rejects(field, value):
    g = SectorGeometry.auto(1.0)
    kwargs = {k: getattr(g, k) for k in ("r", "epsilon", "omega", "omega_prime", "mu", "delta", "delta_prime", "a")}
    kwargs[field] = value
    with pytest.raises(GeometryError):
        SectorGeometry(**kwargs).validate()


def test_geometry_needs_positive_residue():
    with pytest.raises(GeometryError):
        SectorGeometry.auto(-1.0)


def test_rotation_scales_coefficients():
    S = MultiSeries.monomial(2, 1, 0, 4, 2)
    assert rotate_series(S, 2j, -1).coeff(2, 1, 0) == pytest.approx(2j)


def test_membership_regions():
    g = SectorGeometry.auto(1.0)
    m = domain_membership([0.5j * g.r, 0, 0], g)
    assert m.in_sigma and m.in_omega and not m.in_theta_plus
    m = domain_membership([0.9 * g.r, 0, 0], g)
    assert m.in_theta_plus and not m.in_omega
    m = domain_membership([-0.5j * g.r, 0, 0], g)
    assert not m.in_omega


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(-0.6, 0.6), st.sampled_from([1, -1]))
def test_model_closed_form(rho, phase, sign):
    a1 = a2 = 0.6 + 0.1j
    fld = SectorialField.model(a1, a2)
    g = SectorGeometry.auto(fld.a, sign=sign)
    p0 = [0.1 * rho * np.exp(1j * (sign * math.pi / 2 + phase)), 0.01, 0.02j]
    tr = integrate_flow(fld, p0, g, t_end=20.0, check_domain=False)
    assert np.max(np.abs(tr.states - model_solution(a1, a2, p0, tr.times, sign))) < 1e-8


def test_flow_stays_and_decays(prepared):
    fld, g = prepared
    for p0 in sample_omega(g, np.random.default_rng(1), 5, x_floor=5e-3):
        tr = integrate_flow(fld, p0, g, x_min=0.3 * abs(p0[0]), t_end=critical_time_bound(p0[0], g))
        assert all(f.in_omega for f in tr.flags)
        assert decay_bound_violation(tr, g) <= 0


def test_exit_is_reported(prepared):
    fld, g = prepared
    with pytest.raises(StabilityViolation):
        integrate_flow(fld, [-0.5j * g.r, 0.01, 0.0], g, t_end=5.0)
    tr = integrate_flow(fld, [-0.5j * g.r, 0.01, 0.0], g, t_end=5.0, check_domain=False)
    assert not tr.flags[0].in_omega


def test_perturbation_margin(prepared):
    fld, g = prepared
    assert perturbation_margin(fld, g) > 0


def test_path_integral_residual(prepared):
    fld, g = prepared
    M = 2
    A = (-fld.R).mul_x(-(M + 1))
    formal = formal_homological(fld, A, M)
    p = np.array([0.04j, 0.01, 0.02])

    def alpha(x, y1, y2):
        return homological_path_integral(A, M, fld, [x, y1, y2], g, formal=formal).value

    target = p[0] ** (M + 1) * complex(A(*p))
    assert lie_residual(alpha, fld, p, target) < 1e-6


def test_sectorial_maps_conjugate(prepared):
    fld, g = prepared
    N = 1
    radial, _, composed = build_sectorial_maps(fld, N, g)
    assert radial.kind == "radial" and composed.kind == "composed"
    p = np.array([complex(fld.from_rotated(0.04j)), 0.01, 0.015])
    val = check_smallness(composed, [p])
    assert 1.0 <= val <= 1.25
    # the composed map takes the field to the target: D Psi . Y = Y_target o Psi
    h = 1e-6
    lam = fld.lam
    x0, y1, y2 = p
    Zr = fld.Z(complex(fld.to_rotated(x0)), y1, y2)
    Y = np.array([Zr[0] * lam, Zr[1] * lam, Zr[2] * lam])  # original-coordinate field
    img = np.array(composed(*p), dtype=complex)
    J = np.zeros((3, 3), dtype=complex)
    for k in range(3):
        e = np.zeros(3, dtype=complex)
        e[k] = h * max(abs(p[k]), 1e-3)
        J[:, k] = (np.array(composed(*(p + e))) - np.array(composed(*(p - e)))) / (2 * e[k])
    lhs = J @ Y
    rhs = composed.normal_form(*img)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-6


def test_flatness_fit():
    r = np.linspace(0.05, 0.2, 8)
    rep = fit_flatness(r, 0.3 * np.exp(-1.5 / r))
    assert rep.conclusive and rep.B == pytest.approx(1.5) and rep.A == pytest.approx(0.3)
    assert not fit_flatness(r, np.zeros_like(r)).conclusive
