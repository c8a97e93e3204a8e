import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenode.saddle_node import (
    FieldShapeError,
    NotASaddleNode,
    SaddleNodeField,
    classify,
    diagonalize_constant_linear_part,
    is_nonpositive_rational,
    random_saddle_node,
    residue,
)
from saddlenode.series_core import MultiSeries

K, D = 6, 4


def _model(lam, a1, a2):
    y1, y2, x = MultiSeries.y1(K, D), MultiSeries.y2(K, D), MultiSeries.x(K, D)
    return SaddleNodeField.from_components(y1 * (-lam + a1 * x), y2 * (lam + a2 * x))


def test_spectral_data_of_model():
    Y = _model(2.0, 0.3, 0.4 + 0.1j)
    assert Y.lam == pytest.approx(2.0)
    assert (Y.a1, Y.a2) == (pytest.approx(0.3), pytest.approx(0.4 + 0.1j))
    assert Y.residue == pytest.approx(0.7 + 0.1j)


def test_rejects_nonzero_constant():
    c = MultiSeries.y1(K, D) + 1.0
    with pytest.raises(FieldShapeError):
        SaddleNodeField.from_components(c, MultiSeries.y2(K, D))


def test_rejects_non_opposite_spectrum():
    with pytest.raises(NotASaddleNode):
        SaddleNodeField.from_components(MultiSeries.y1(K, D), 2.0 * MultiSeries.y2(K, D))


@pytest.mark.parametrize(
    "res,expected",
    [
        (1.0, "strictly_non_degenerate"),
        (0.2 - 3j, "strictly_non_degenerate"),
        (0.0, "degenerate"),
        (-2.0, "degenerate"),
        (-1.5, "degenerate"),
        (-0.5 + 0.3j, "non_degenerate"),
        (-np.sqrt(2), "non_degenerate"),
    ],
)
def test_classify(res, expected):
    assert classify(complex(res)) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 50), st.integers(1, 50))
def test_negative_rationals_are_resonant(p, q):
    assert is_nonpositive_rational(complex(-p / q))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_random_fields_are_strictly_non_degenerate(seed):
    Y = random_saddle_node(seed, 6, 4)
    assert classify(Y) == "strictly_non_degenerate"
    assert residue(Y) == pytest.approx(Y.residue)


def test_diagonalization_has_unit_determinant():
    x, y1, y2 = MultiSeries.x(K, D), MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    Y = SaddleNodeField.from_components(0.5 * y1 + 1.5 * y2 + x * y1, 1.5 * y1 - 0.5 * y2)
    Yd, P = diagonalize_constant_linear_part(Y)
    assert Yd.is_diagonal()
    assert abs(np.linalg.det(P.linear_part()) - 1) < 1e-12
    assert Yd.residue == pytest.approx(Y.residue)


def test_json_roundtrip():
    Y = random_saddle_node(1, 6, 4)
    Z = SaddleNodeField.from_json_dict(Y.to_json_dict())
    assert Z.comp_y1.allclose(Y.comp_y1, 0.0) and Z.lam == Y.lam
