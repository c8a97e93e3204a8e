import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenode.formal_normalization import (
    ConfigError,
    normalize,
    run_pipeline,
    solve_homological,
    verify_conjugacy,
)
from saddlenode.saddle_node import SaddleNodeField, random_saddle_node
from saddlenode.series_core import ConjugacyMap, MultiSeries, exp_flow_map, lie_derivative
from saddlenode.formal_normalization import _prepared_vector_field

K, D, N = 8, 6, 3


@pytest.fixture(scope="module")
def pipeline():
    Y = random_saddle_node(2, K, D)
    return Y, run_pipeline(Y, N)


def test_identity_has_zero_residual():
    Y = random_saddle_node(0, K, D)
    r = verify_conjugacy(Y, ConjugacyMap.identity(K, D), Y)
    assert r.max_abs == 0.0


def test_flow_map_residual_matches_expansion():
    # Lambda_tau with tau = x v on the model: the defect is y_i L_Y0(tau)
    lam = 1.0
    x, y1, y2 = MultiSeries.x(K, D), MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    Y0 = SaddleNodeField.from_components(-lam * y1 + 0.3 * x * y1, lam * y2 + 0.4 * x * y2)
    tau = x * y1 * y2
    phi = exp_flow_map(tau)
    r = verify_conjugacy(Y0, phi, Y0)
    Lt = lie_derivative(Y0.field, tau)
    expected = phi.comp_y1 * Lt
    assert (r.comp_y1 - expected).max_abs(mask=r.mask) < 1e-12


def test_pipeline_conjugates(pipeline):
    Y, res = pipeline
    assert verify_conjugacy(Y, res.map, res.Y_N, x_below=N).max_abs < 1e-8
    for name, val in res.data.stage_remainders.items():
        assert val < 1e-8, name


def test_div_integrable_gives_opposite_c(pipeline):
    _, res = pipeline
    assert (res.data.c1 + res.data.c2).max_abs() < 1e-8


def test_normal_form_invariants(pipeline):
    Y, res = pipeline
    assert res.data.residue == pytest.approx(Y.residue, abs=1e-10)


def test_d_stabilizes(pipeline):
    _, res = pipeline
    hist = res.data.d_history
    for h in hist[2:]:
        assert np.max(np.abs(h.c - hist[1].c)) < 1e-9


def test_stage_idempotence(pipeline):
    _, res = pipeline
    again = run_pipeline(res.Y_N, N)
    ident = ConjugacyMap.identity(K, D)
    assert (again.map.comp_y1 - ident.comp_y1).max_abs(N) < 1e-9
    assert (again.map.comp_y2 - ident.comp_y2).max_abs(N) < 1e-9


def test_orbital_methods_agree(pipeline):
    Y, res = pipeline
    other = run_pipeline(Y, N, orbital_method="general")
    assert (other.data.c1 - res.data.c1).max_abs() < 1e-8


def test_normalize_wrapper(pipeline):
    Y, res = pipeline
    data, phi, Y_N = normalize(Y, N)
    assert (phi.comp_y1 - res.map.comp_y1).max_abs() == 0.0


def test_truncation_check():
    with pytest.raises(ConfigError):
        run_pipeline(random_saddle_node(0, K, 4), 3)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_homological_solution(seed, M):
    res = run_pipeline(random_saddle_node(seed % 7, K, D), 3)
    rng = np.random.default_rng(seed)
    rhs = MultiSeries.from_function(lambda m, a, b: complex(rng.normal(), rng.normal()), K, D)
    d = res.data
    alpha = solve_homological(d.lam, d.a1, d.a2, res.D, res.R, rhs, M)
    Z = _prepared_vector_field(d.lam, d.a1, d.a2, res.D, res.R)
    lhs = lie_derivative(Z, alpha)
    target = rhs.mul_x(M + 1)
    scale = max(target.max_abs(), 1.0)
    assert (lhs - target).max_abs(K - 1) / scale < 1e-9
    assert alpha.constant_term() == 0
