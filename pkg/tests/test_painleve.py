import numpy as np
import pytest

from saddlenode.formal_normalization import run_pipeline
from saddlenode.painleve import (
    ZETA,
    HamiltonianSystem,
    ShapeError,
    boutroux_transform,
    check_transversally_hamiltonian,
    check_transversally_symplectic,
    p1_field,
    p1_hamiltonian,
)
from saddlenode.saddle_node import classify
from saddlenode.series_core import ConjugacyMap, MultiSeries


def test_zeta_is_a_root():
    assert abs(6 * ZETA**2 + 1) < 1e-15


def test_transform_matches_closed_form():
    Y = boutroux_transform(p1_hamiltonian(), 10, 8)
    P = p1_field(10, 8)
    assert (Y.comp_y1 - P.comp_y1).max_abs() < 1e-14
    assert (Y.comp_y2 - P.comp_y2).max_abs() < 1e-14


def test_raw_chart_before_translation():
    raw = boutroux_transform(p1_hamiltonian(), 10, 8, zeta=None)
    # dz2/dt = 6 z1^2 + t lands on -(4/5)(6 y1^2 + 1) in dy2
    assert raw.comp_y2.coeff(0, 2, 0) == pytest.approx(-4.8)
    assert raw.comp_y2.coeff(0, 0, 0) == pytest.approx(-0.8)


def test_spectral_data():
    Y = p1_field()
    assert Y.residue == pytest.approx(1.0)
    assert classify(Y) == "strictly_non_degenerate"
    assert Y.lam**2 == pytest.approx(-0.8 * -9.6 * ZETA)


def test_fractional_chart_is_rejected():
    with pytest.raises(ShapeError):
        boutroux_transform(HamiltonianSystem({(0, 2, 0): 1.0}))


def test_hamiltonian_certificate():
    cert = check_transversally_hamiltonian(p1_field())
    assert cert.is_hamiltonian and cert.dx_in_ideal


def test_non_hamiltonian_detected():
    Y = p1_field()
    bad = Y.field.comp_y1 + 0.1 * MultiSeries.monomial(0, 1, 0, Y.K, Y.D)
    from saddlenode.series_core import PolyVectorField

    cert = check_transversally_hamiltonian(PolyVectorField(Y.field.comp_x, bad, Y.field.comp_y2))
    assert not cert.is_hamiltonian
    assert cert.max_offending == pytest.approx(0.1)


def test_formal_map_is_symplectic():
    res = run_pipeline(p1_field(), 4)
    ok, worst = check_transversally_symplectic(res.map, x_below=4)
    assert ok, worst
    assert abs(res.data.a1 + res.data.a2 - 1) < 1e-9
    assert (res.data.c1 + res.data.c2).max_abs() < 1e-8


def test_pointwise_symplectic_check():
    K, D = 6, 4
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    shear = ConjugacyMap(y1, y2 + 0.5 * y1 * y1)
    ok, _ = check_transversally_symplectic(shear, samples=[(0.1, 0.2, 0.3)])
    assert ok
    ok, _ = check_transversally_symplectic(lambda x, a, b: (x, 2 * a, b), samples=[(0.1, 0.2, 0.3)])
    assert not ok
