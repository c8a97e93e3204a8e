"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from saddlenode.borel_laplace import (
    Direction,
    WeightedNormParams,
    borel,
    borel_pade_laplace,
    fact_inequality_margin,
    irregular_borel_closed_form,
    irregular_norm_bound,
    solve_irregular_ode,
    weighted_norm,
)
from saddlenode.formal_normalization import run_pipeline, verify_conjugacy
from saddlenode.painleve import check_transversally_symplectic, p1_field
from saddlenode.saddle_node import classify, random_saddle_node
from saddlenode.sectorial import (
    SectorGeometry,
    SectorialField,
    StabilityViolation,
    build_sectorial_maps,
    critical_time_bound,
    decay_bound_violation,
    formal_homological,
    homological_path_integral,
    integrate_flow,
    lie_residual,
    model_solution,
    sample_omega,
    transition_flatness,
)
from saddlenode.series_core import UniSeries


@pytest.fixture
def say(capsys):
    def _say(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}")

    return _say


def _sectorial_field(seed, order):
    res = run_pipeline(random_saddle_node(seed, 10, 8), order)
    d = res.data
    return SectorialField.from_prepared(d.lam, d.a1, d.a2, res.D, res.R)


def test_painleve_pipeline(say):
    t0 = time.perf_counter()
    res = run_pipeline(p1_field(10, 8), 4)
    elapsed = time.perf_counter() - t0
    d = res.data
    e_res = abs(d.residue - 1)
    e_a = abs(d.a1 + d.a2 - 1)
    e_c = float(np.max(np.abs((d.c1 + d.c2).c[:4])))
    sym_ok, e_det = check_transversally_symplectic(res.map, x_below=4)
    ok = e_res < 1e-9 and e_a < 1e-9 and e_c < 1e-8 and sym_ok and e_det < 1e-8 and elapsed < 10
    say(1, ok, f"|res-1|={e_res:.2e} |a1+a2-1|={e_a:.2e} |c1+c2|={e_c:.2e} det={e_det:.2e} t={elapsed:.2f}s")
    assert ok


def test_random_conjugacy_residual(say):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        Y = random_saddle_node(seed, 10, 8)
        assert classify(Y) == "strictly_non_degenerate"
        res = run_pipeline(Y, 4)
        worst = max(worst, verify_conjugacy(Y, res.map, res.Y_N, x_below=4).max_abs)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 60
    say(2, ok, f"worst residual={worst:.2e} over 20 fields, t={elapsed:.1f}s")
    assert ok


def test_euler_chain(say):
    K = 20
    b = UniSeries.monomial(1, K)
    a = solve_irregular_ode(b, 1.0)
    expected = np.array([0.0] + [(-1) ** (n - 1) * math.factorial(n - 1) for n in range(1, K)])
    exact = bool(np.array_equal(a.c.real, expected)) and not np.any(a.c.imag)
    # the ray of direction pi carries the Borel pole of a; the sum is taken
    # for the reflected series a(-x), whose transform is regular there
    refl = UniSeries(a.c * (-1.0) ** np.arange(K))
    value, _ = borel_pade_laplace(refl, math.pi, -0.1)
    err = abs(value - 0.0915633)
    ok = exact and err < 1e-7
    say(3, ok, f"recursion exact={exact} sum={value.real:.9f} |err|={err:.2e}")
    assert ok


def test_norm_inequalities(say):
    slack_alg, slack_irr = np.inf, np.inf
    for seed in range(50):
        rng = np.random.default_rng(seed)
        beta = rng.uniform(0.5, 3.0)
        n = 6
        f = np.zeros(2 * n + 1, complex)
        g = np.zeros(2 * n + 1, complex)
        f[:n] = rng.normal(size=n) + 1j * rng.normal(size=n)
        g[:n] = rng.normal(size=n) + 1j * rng.normal(size=n)
        F, G = UniSeries(f), UniSeries(g)
        P = WeightedNormParams(beta)
        nf = weighted_norm(F, P, continuation="polynomial").value
        ng = weighted_norm(G, P, continuation="polynomial").value
        nfg = weighted_norm(F * G, P, continuation="polynomial").value
        slack_alg = min(slack_alg, 4 * math.pi / beta * nf * ng - nfg)
        while True:
            k = complex(rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0))
            alpha = complex(rng.uniform(-0.05, 0.05), 0.0)
            bound = irregular_norm_bound(beta, k, alpha, Direction(0.0))
            if np.isfinite(bound):
                break
        bc = np.zeros(n, complex)
        bc[1:] = rng.normal(size=n - 1) + 1j * rng.normal(size=n - 1)
        B = UniSeries(bc)
        Ga = irregular_borel_closed_form(borel(B), k, alpha)
        na = weighted_norm(None, P, continuation=Ga).value
        nb = weighted_norm(B, P, continuation="polynomial").value
        slack_irr = min(slack_irr, bound * nb - na)
    fact = min(fact_inequality_margin(b, t) for b in (0.5, 1.0, 2.0) for t in np.linspace(0.0, 10.0, 101))
    ok = slack_alg >= 0 and slack_irr >= 0 and fact >= 0
    say(4, ok, f"min slack algebra={slack_alg:.3e} irregular={slack_irr:.3e} fact margin={fact:.3e}")
    assert ok


def test_flow_geometry(say):
    t0 = time.perf_counter()
    # model field against closed forms
    a1 = a2 = 0.7 + 0.2j
    model = SectorialField.model(a1, a2)
    gm = SectorGeometry.auto(model.a)
    model_err = 0.0
    for p0 in ([0.05 + 0.1j, 0.01, 0.02], [-0.08 + 0.02j, 0.03j, 0.01]):
        tr = integrate_flow(model, p0, gm, t_end=40.0, check_domain=False)
        exact = model_solution(a1, a2, p0, tr.times)
        model_err = max(model_err, float(np.max(np.abs(tr.states - exact))))
    # seeded prepared field
    fld = _sectorial_field(3, 4)
    g = SectorGeometry.auto(fld.a, fld=fld)
    rng = np.random.default_rng(2024)
    worst_bound = -np.inf
    stayed = 0
    for p0 in sample_omega(g, rng, 100, x_floor=2e-3):
        try:
            tr = integrate_flow(fld, p0, g, x_min=0.25 * abs(p0[0]), t_end=critical_time_bound(p0[0], g))
        except StabilityViolation:
            continue
        stayed += 1
        worst_bound = max(worst_bound, decay_bound_violation(tr, g))
    entered = 0
    for p0 in sample_omega(g, rng, 100, x_floor=2e-3, theta_only=True):
        tcrit = critical_time_bound(p0[0], g)
        tr = integrate_flow(fld, p0, g, x_min=0.25 * abs(p0[0]), t_end=tcrit)
        worst_bound = max(worst_bound, decay_bound_violation(tr, g))
        i = tr.sigma_entry()
        entered += i is not None and tr.times[i] < tcrit
    elapsed = time.perf_counter() - t0
    ok = model_err < 1e-8 and stayed == 100 and worst_bound <= 0 and entered == 100 and elapsed < 120
    say(
        5, ok,
        f"{stayed}/100 starts stayed in Omega, bound violation={worst_bound:.2e}, Theta entries={entered}/100, "
        f"model err={model_err:.2e}, t={elapsed:.1f}s",
    )
    assert ok


def test_sectorial_homological_residual(say):
    worst = 0.0
    M = 3
    for seed in (5, 11):
        fld = _sectorial_field(seed, 4)
        g = SectorGeometry.auto(fld.a, fld=fld)
        A = (-fld.R).mul_x(-(M + 1))
        formal = formal_homological(fld, A, M)

        def alpha(x, y1, y2):
            return homological_path_integral(A, M, fld, [x, y1, y2], g, formal=formal).value

        rng = np.random.default_rng(seed)
        for p in sample_omega(g, rng, 20, x_floor=1e-2):
            target = p[0] ** (M + 1) * complex(A(*p))
            worst = max(worst, lie_residual(alpha, fld, p, target))
    ok = worst < 1e-6
    say(6, ok, f"worst relative residual={worst:.2e} over 2 x 20 points")
    assert ok


def test_weak_asymptotics(say):
    fld = _sectorial_field(7, 2)
    g = SectorGeometry.auto(fld.a, fld=fld)
    radial = build_sectorial_maps(fld, 0, g)[0]
    # coefficient of y1 y2 in the multiplier y1' / y1 = exp(rho)
    formal = radial.rho_formal.exp()
    coef = [formal.coeff(m, 1, 1) for m in range(4)]
    J, s = 6, 0.03
    th = 2 * np.pi * np.arange(J) / J
    radii = np.geomspace(0.005, 0.03, 5)
    extracted = []
    for r in radii:
        x = complex(fld.from_rotated(1j * r))
        acc = 0j
        for a in th:
            for b in th:
                y1, y2 = s * np.exp(1j * a), s * np.exp(1j * b)
                acc += radial(x, y1, y2)[1] / y1 * np.exp(-1j * (a + b))
        extracted.append(acc / (J * J * s * s))
    extracted = np.array(extracted)
    slopes = []
    for k in (1, 2, 3):
        trunc = sum(coef[m] * (1j * radii) ** m for m in range(k))
        slopes.append(np.polyfit(np.log(radii), np.log(np.abs(extracted - trunc)), 1)[0])
    ok = all(abs(sl - k) < 0.15 for sl, k in zip(slopes, (1, 2, 3)))
    say(7, ok, "slopes " + ", ".join(f"k={k}: {sl:.3f}" for k, sl in zip((1, 2, 3), slopes)))
    assert ok


def test_transition_flatness(say):
    res = run_pipeline(p1_field(10, 8), 2)
    d = res.data
    fld = SectorialField.from_prepared(d.lam, d.a1, d.a2, res.D, res.R)
    maps = {}
    for sign in (1, -1):
        g = SectorGeometry.auto(fld.a, sign=sign, fld=fld)
        maps[sign] = build_sectorial_maps(fld, 0, g, check_domain=False)[2]
    samples = [(complex(fld.from_rotated(r)), 0.01, 0.01) for r in np.linspace(0.04, 0.12, 6)]
    rep = transition_flatness(maps[1], maps[-1], samples)
    ok = rep.conclusive and rep.B > 0
    say(8, ok, f"(exploratory) fitted A={rep.A:.3e} B={rep.B:.3f}")
    if not ok:
        pytest.xfail("flatness fit inconclusive (non-gating)")
