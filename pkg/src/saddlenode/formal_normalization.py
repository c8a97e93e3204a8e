"""
Formal normalization of diagonal doubly-resonant saddle-nodes.

Pipeline (each stage returns the pushed-forward field and the map from
old to new coordinates):

1. constant linear diagonalization (unit determinant);
2. translation of the formal center manifold ``y = y_hat(x)``;
3. orbital linearization of the restriction to ``{x = 0}``;
4. Riccati diagonalization of the linear part ``A(x)``;
5. scalar gauge reducing the diagonal to ``-lam + a1 x``, ``lam + a2 x``;
6. straightening of the invariant hypersurfaces ``{y1 = 0}``, ``{y2 = 0}``;
7. alternating radial and tangential flows killing the ``x``-dependence
   of the prepared field up to order ``N``.

Prepared fields are stored through two scalar series ``D`` and ``R``::

    Y = Y0 + D (-y1 d1 + y2 d2) + R (y1 d1 + y2 d2)
    Y0 = x^2 dx + (-lam + a1 x) y1 d1 + (lam + a2 x) y2 d2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .borel_laplace import solve_irregular_ode
from .saddle_node import (
    NotDivIntegrable,
    SaddleNodeField,
    basis_fields,
    classify,
    diagonalize_constant_linear_part,
    is_nonpositive_rational,
    orbital_linearize_x0,
    orbital_normal_form_x0,
    proportionality_defect,
    restrict_to_x0,
)
from .series_core import (
    ConjugacyMap,
    MultiIndex,
    MultiSeries,
    PolyVectorField,
    SeriesError,
    UniSeries,
    apply_lc,
    compose_fibered,
    exp_flow_inverse_time,
    exp_flow_map,
    honest_mask,
    lie_derivative,
    monomial_table,
    resonant_split,
)

__all__ = [
    "ConjugacyMap",
    "NormalFormData",
    "StraighteningState",
    "PipelineResult",
    "DegenerateResidue",
    "ConfigError",
    "center_manifold",
    "linearize_restriction",
    "diagonalize_linear_terms",
    "scalar_gauge",
    "straighten_hypersurfaces",
    "normalize_to_order",
    "normalize",
    "run_pipeline",
    "verify_conjugacy",
    "normal_form_field",
    "prepared_parts",
    "prepared_field",
    "solve_homological",
]

EPS_PIPELINE = 1e-8
EPS_DELTA = 1e-12
EPS_DIVIDE = 1e-8


class DegenerateResidue(ValueError):
    """A radial or tangential recursion hit ``(k - 1) + a j = 0``."""


class ConfigError(ValueError):
    """Infeasible truncation orders."""


class InvariantViolation(RuntimeError):
    """An internal invariant of the pipeline failed."""


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass
class NormalFormData:
    """Normal form ``x^2 dx + (-lam + a1 x + c1(v)) y1 d1 + (lam + a2 x + c2(v)) y2 d2``."""

    lam: complex
    a1: complex
    a2: complex
    c1: UniSeries
    c2: UniSeries
    d_N: UniSeries
    stage_remainders: dict[str, float] = field(default_factory=dict)
    d_history: list[UniSeries] = field(default_factory=list)
    condition_number: float = 1.0

    @property
    def residue(self) -> complex:
        return self.a1 + self.a2

    def to_json_dict(self) -> dict:
        cplx = lambda z: {"re": float(np.real(z)), "im": float(np.imag(z))}  # noqa: E731
        ser = lambda u: [cplx(z) for z in u.c]  # noqa: E731
        return {
            "lambda": cplx(self.lam),
            "a1": cplx(self.a1),
            "a2": cplx(self.a2),
            "residue": cplx(self.residue),
            "c1": ser(self.c1),
            "c2": ser(self.c2),
            "d_N": ser(self.d_N),
            "stage_remainders": {k: float(v) for k, v in self.stage_remainders.items()},
            "condition_number": float(self.condition_number),
        }


@dataclass
class StraighteningState:
    """Bookkeeping of the hypersurface straightening.

    ``psi`` holds the pure monomials (``n1 = 0`` or ``n2 = 0``) of the
    inverse map, ``T`` the mixed monomials of the new nonlinearity.
    """

    psi1: MultiSeries
    psi2: MultiSeries
    T1: MultiSeries
    T2: MultiSeries
    delta_table: dict[MultiIndex, UniSeries] = field(default_factory=dict)
    zeta_cache: dict[MultiIndex, UniSeries] = field(default_factory=dict)

    def selection_rule_defect(self) -> float:
        tab = monomial_table(self.psi1.D)
        mixed = (tab.mono[:, 0] >= 1) & (tab.mono[:, 1] >= 1)
        bad_psi = max(
            float(np.max(np.abs(p.table[:, mixed]), initial=0.0)) for p in (self.psi1, self.psi2)
        )
        bad_T = max(float(np.max(np.abs(t.table[:, ~mixed]), initial=0.0)) for t in (self.T1, self.T2))
        return max(bad_psi, bad_T)


@dataclass
class PipelineResult:
    data: NormalFormData
    map: ConjugacyMap
    Y_N: SaddleNodeField
    stages: dict[str, ConjugacyMap]
    fields: dict[str, SaddleNodeField]
    y_hat: tuple[UniSeries, UniSeries]
    D: MultiSeries
    R: MultiSeries
    N: int
    nu: int | None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _uni_on_curve(f: MultiSeries, u1: UniSeries, u2: UniSeries) -> UniSeries:
    """``f(x, u1(x), u2(x))`` as a series in ``x``."""
    tab = monomial_table(f.D)
    K = f.K
    p1 = [UniSeries.monomial(0, K)]
    p2 = [UniSeries.monomial(0, K)]
    for _ in range(f.D):
        p1.append(p1[-1] * u1)
        p2.append(p2[-1] * u2)
    out = UniSeries.zeros(K)
    for j, (n1, n2) in enumerate(tab.mono):
        col = f.table[:, j]
        if np.any(col):
            out = out + UniSeries(col) * p1[n1] * p2[n2]
    return out


def _field(comp_y1: MultiSeries, comp_y2: MultiSeries, lam: complex) -> SaddleNodeField:
    return SaddleNodeField.from_components(comp_y1, comp_y2, lam)


def _pushforward(Y: SaddleNodeField, phi: ConjugacyMap, inverse: ConjugacyMap | None = None) -> SaddleNodeField:
    new = phi.pushforward(Y.field, inverse)
    return _field(new.comp_y1, new.comp_y2, Y.lam)


def prepared_parts(Y: SaddleNodeField, tol: float = EPS_DIVIDE) -> tuple[complex, complex, MultiSeries, MultiSeries]:
    """``(a1, a2, D, R)`` of a prepared field.

    ``G_i = comp_i / y_i - (lam_i + a_i x)``, ``D = (G2 - G1)/2``,
    ``R = (G1 + G2)/2``.
    """
    K, D_ = Y.K, Y.D
    lam = Y.lam
    x = MultiSeries.x(K, D_)
    a1 = Y.comp_y1.coeff(1, 1, 0)
    a2 = Y.comp_y2.coeff(1, 0, 1)
    G1 = Y.comp_y1.div_y(1, tol) - (-lam + a1 * x)
    G2 = Y.comp_y2.div_y(2, tol) - (lam + a2 * x)
    return a1, a2, 0.5 * (G2 - G1), 0.5 * (G1 + G2)


def prepared_field(lam: complex, a1: complex, a2: complex, D: MultiSeries, R: MultiSeries) -> SaddleNodeField:
    """Assemble ``Y0 + D C + R R_basis`` (top ``y``-degree is dropped)."""
    K, Dg = D.K, D.D
    x = MultiSeries.x(K, Dg)
    y1, y2 = MultiSeries.y1(K, Dg), MultiSeries.y2(K, Dg)
    c1 = y1 * (-lam + a1 * x - D + R)
    c2 = y2 * (lam + a2 * x + D + R)
    return _field(c1, c2, lam)


def normal_form_field(data: NormalFormData, K: int, D: int) -> SaddleNodeField:
    """The polynomial normal form encoded by ``data``."""
    x = MultiSeries.x(K, D)
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    c1 = MultiSeries.from_v_series(data.c1, K, D)
    c2 = MultiSeries.from_v_series(data.c2, K, D)
    return _field(y1 * (-data.lam + data.a1 * x + c1), y2 * (data.lam + data.a2 * x + c2), data.lam)


# ---------------------------------------------------------------------------
# stage 2: center manifold
# ---------------------------------------------------------------------------


def center_manifold(Y: SaddleNodeField) -> tuple[tuple[UniSeries, UniSeries], SaddleNodeField, ConjugacyMap]:
    """Formal invariant curve ``y = y_hat(x)`` and the translation straightening it.

    The coefficients satisfy
    ``y1_m = ([F1(x, y_hat)]_m - (m - 1) y1_{m-1}) / lam`` and
    ``y2_m = ((m - 1) y2_{m-1} - [F2(x, y_hat)]_m) / lam``, where ``F`` is
    the field minus its constant linear part.
    """
    K, D = Y.K, Y.D
    lam = Y.lam
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    F1 = Y.comp_y1 + lam * y1
    F2 = Y.comp_y2 - lam * y2
    u1 = UniSeries.zeros(K)
    u2 = UniSeries.zeros(K)
    for m in range(1, K):
        g1 = _uni_on_curve(F1, u1, u2)
        g2 = _uni_on_curve(F2, u1, u2)
        c1, c2 = u1.c.copy(), u2.c.copy()
        c1[m] = (g1[m] - (m - 1) * u1[m - 1]) / lam
        c2[m] = ((m - 1) * u2[m - 1] - g2[m]) / lam
        u1, u2 = UniSeries(c1), UniSeries(c2)
    if not (np.any(u1.c) or np.any(u2.c)):
        return (u1, u2), Y, ConjugacyMap.identity(K, D, ("center_manifold",))
    U1 = MultiSeries.from_x_series(u1, K, D)
    U2 = MultiSeries.from_x_series(u2, K, D)
    x2 = MultiSeries.monomial(2, 0, 0, K, D)
    # new field: f(x, y + y_hat) - x^2 y_hat'
    n1 = compose_fibered(Y.comp_y1, y1 + U1, y2 + U2) - x2 * U1.deriv_x()
    n2 = compose_fibered(Y.comp_y2, y1 + U1, y2 + U2) - x2 * U2.deriv_x()
    n1 = MultiSeries(n1.table, K, D)
    n2 = MultiSeries(n2.table, K, D)
    tangent = abs(u1[1]) + abs(u2[1]) == 0
    phi = ConjugacyMap(y1 - U1, y2 - U2, tangent, ("center_manifold",))
    return (u1, u2), _field(n1, n2, lam), phi


# ---------------------------------------------------------------------------
# stage 3: orbital linearization at x = 0
# ---------------------------------------------------------------------------


def linearize_restriction(
    Y: SaddleNodeField, method: Literal["auto", "gamma", "general"] = "auto"
) -> tuple[SaddleNodeField, ConjugacyMap, UniSeries]:
    """Make ``Y|_{x=0} = (lam + d(v)) C`` with an ``x``-independent map.

    ``method="gamma"`` uses the ``(y1 e^gamma, y2 e^-gamma)`` solution,
    valid when the restriction is proportional to ``C``; ``"general"``
    solves for a map with vanishing resonant part; ``"auto"`` picks the
    first when applicable.
    """
    restricted = restrict_to_x0(Y)
    if method == "auto":
        method = "gamma" if proportionality_defect(restricted) <= EPS_PIPELINE else "general"
    if method == "gamma":
        gamma, d = orbital_linearize_x0(restricted, Y.lam)
        phi = exp_flow_map(gamma, (1, -1))
        phi = ConjugacyMap(phi.comp_y1, phi.comp_y2, True, ("orbital_x0",))
    elif method == "general":
        res = orbital_normal_form_x0(restricted, Y.lam)
        phi, d = res.phi, res.d
    else:
        raise ValueError(f"unknown method {method!r}")
    if phi.comp_y1.allclose(MultiSeries.y1(Y.K, Y.D), 0.0) and phi.comp_y2.allclose(
        MultiSeries.y2(Y.K, Y.D), 0.0
    ):
        return Y, ConjugacyMap.identity(Y.K, Y.D, ("orbital_x0",)), d
    return _pushforward(Y, phi), phi, d


# ---------------------------------------------------------------------------
# stage 4: Riccati diagonalization
# ---------------------------------------------------------------------------


def _linear_entries(Y: SaddleNodeField) -> tuple[UniSeries, UniSeries, UniSeries, UniSeries]:
    """``(b1, b2, c1, c2)`` with ``A = [[-lam + x b1, x c1], [x c2, lam + x b2]]``."""
    A = Y.linear_part()
    lam = Y.lam
    b1 = (A[0][0] + lam).shift(-1)
    b2 = (A[1][1] - lam).shift(-1)
    c1 = A[0][1].shift(-1)
    c2 = A[1][0].shift(-1)
    for name, u in (("A12", A[0][1]), ("A21", A[1][0])):
        if abs(u[0]) > EPS_PIPELINE:
            raise InvariantViolation(f"{name} does not vanish at x = 0")
    return b1, b2, c1, c2


def diagonalize_linear_terms(Y1: SaddleNodeField) -> tuple[UniSeries, UniSeries, SaddleNodeField, ConjugacyMap]:
    """Solve the two Riccati equations and remove the off-diagonal linear terms.

    With ``z = P(x) y``, ``P = [[1, x p2], [x p1, 1]]``::

        x^2 p1' = c2 + (2 lam + x (b2 - 1 - b1)) p1 - x^2 c1 p1^2
        x^2 p2' = c1 + (-2 lam + x (b1 - 1 - b2)) p2 - x^2 c2 p2^2

    solved coefficientwise from ``p1(0) = -c2(0)/(2 lam)``,
    ``p2(0) = c1(0)/(2 lam)``.
    """
    K, D = Y1.K, Y1.D
    lam = Y1.lam
    b1, b2, c1, c2 = _linear_entries(Y1)
    if c1.max_abs() == 0 and c2.max_abs() == 0:
        return UniSeries.zeros(K), UniSeries.zeros(K), Y1, ConjugacyMap.identity(K, D, ("riccati",))
    e1 = b2 - 1.0 - b1
    e2 = b1 - 1.0 - b2
    p1 = np.zeros(K, dtype=complex)
    p2 = np.zeros(K, dtype=complex)
    for m in range(K):
        s1 = -c2[m] + (m - 1) * p1[m - 1] if m >= 1 else -c2[0]
        s2 = c1[m] - (m - 1) * p2[m - 1] if m >= 1 else c1[0]
        if m >= 1:
            s1 -= np.dot(e1.c[:m], p1[m - 1 :: -1][:m])
            s2 += np.dot(e2.c[:m], p2[m - 1 :: -1][:m])
        if m >= 2:
            q1 = np.convolve(p1[: m - 1], p1[: m - 1])[: m - 1]
            q2 = np.convolve(p2[: m - 1], p2[: m - 1])[: m - 1]
            s1 += np.dot(c1.c[: m - 1], q1[::-1])
            s2 -= np.dot(c2.c[: m - 1], q2[::-1])
        p1[m] = s1 / (2 * lam)
        p2[m] = s2 / (2 * lam)
    P1, P2 = UniSeries(p1), UniSeries(p2)
    x = UniSeries.monomial(1, K)
    det = 1.0 - x * x * P1 * P2
    inv_det = det.reciprocal()
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    # y_new = P^{-1} z_old
    m11 = MultiSeries.from_x_series(inv_det, K, D)
    m12 = MultiSeries.from_x_series(-(x * P2) * inv_det, K, D)
    m21 = MultiSeries.from_x_series(-(x * P1) * inv_det, K, D)
    phi = ConjugacyMap(m11 * y1 + m12 * y2, m21 * y1 + m11 * y2, True, ("riccati",))
    inv = ConjugacyMap(
        y1 + MultiSeries.from_x_series(x * P2, K, D) * y2,
        MultiSeries.from_x_series(x * P1, K, D) * y1 + y2,
        True,
        ("riccati_inverse",),
    )
    return P1, P2, _pushforward(Y1, phi, inv), phi


# ---------------------------------------------------------------------------
# stage 5: scalar gauge
# ---------------------------------------------------------------------------


def scalar_gauge(Y2: SaddleNodeField) -> tuple[UniSeries, UniSeries, SaddleNodeField, ConjugacyMap]:
    """``z_j = q_j(x) y_j`` with ``q_j = exp(int_0^x (a_hat_j - a_j)/s ds)``."""
    K, D = Y2.K, Y2.D
    b1, b2, _, _ = _linear_entries(Y2)
    q = []
    for b in (b1, b2):
        g = (b - b[0]).shift(-1).integral()
        q.append(g.exp())
    q1, q2 = q
    if np.allclose(q1.c[1:], 0, atol=0) and np.allclose(q2.c[1:], 0, atol=0):
        return q1, q2, Y2, ConjugacyMap.identity(K, D, ("gauge",))
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    phi = ConjugacyMap(
        y1 * MultiSeries.from_x_series(q1.reciprocal(), K, D),
        y2 * MultiSeries.from_x_series(q2.reciprocal(), K, D),
        True,
        ("gauge",),
    )
    inv = ConjugacyMap(
        y1 * MultiSeries.from_x_series(q1, K, D),
        y2 * MultiSeries.from_x_series(q2, K, D),
        True,
        ("gauge_inverse",),
    )
    return q1, q2, _pushforward(Y2, phi, inv), phi


# ---------------------------------------------------------------------------
# stage 6: straightening of the invariant hypersurfaces
# ---------------------------------------------------------------------------


def straighten_hypersurfaces(Y3: SaddleNodeField) -> tuple[StraighteningState, SaddleNodeField, ConjugacyMap]:
    """Remove the pure monomials ``y1^n``, ``y2^n`` from the nonlinearities.

    With the old coordinates written ``y_j + psi_j(x, y)`` in terms of the
    new ones, each coefficient solves
    ``x^2 psi' + delta_{j,n}(x) psi + T = zeta`` with
    ``delta_{j,n} = sum_i n_i (lam_i + a_i x) - (lam_j + a_j x)``; pure
    monomials get ``T = 0`` (an irregular scalar ODE for ``psi``), mixed
    ones ``psi = 0`` and ``T = zeta``.
    """
    K, D = Y3.K, Y3.D
    lam = Y3.lam
    tab = monomial_table(D)
    x = MultiSeries.x(K, D)
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    a1 = Y3.comp_y1.coeff(1, 1, 0)
    a2 = Y3.comp_y2.coeff(1, 0, 1)
    lin1 = (-lam + a1 * x) * y1
    lin2 = (lam + a2 * x) * y2
    F = (Y3.comp_y1 - lin1, Y3.comp_y2 - lin2)
    lams = (-lam, lam)
    aas = (a1, a2)
    pure = (tab.mono[:, 0] == 0) | (tab.mono[:, 1] == 0)
    psi = [MultiSeries.zeros(K, D), MultiSeries.zeros(K, D)]
    T = [MultiSeries.zeros(K, D), MultiSeries.zeros(K, D)]
    state = StraighteningState(psi[0], psi[1], T[0], T[1])
    for n in range(2, D + 1):
        sel = tab.deg == n
        g1, g2 = y1 + psi[0], y2 + psi[1]
        new_psi = [p.table.copy() for p in psi]
        new_T = [t.table.copy() for t in T]
        for j in range(2):
            zeta = compose_fibered(F[j], g1, g2) - (
                T[0] * psi[j].deriv_y1() + T[1] * psi[j].deriv_y2()
            )
            for col in np.nonzero(sel)[0]:
                n1, n2 = int(tab.mono[col, 0]), int(tab.mono[col, 1])
                z = UniSeries(zeta.table[:, col])
                key = MultiIndex(j + 1, n1, n2)
                if pure[col]:
                    k = n1 * lams[0] + n2 * lams[1] - lams[j]
                    if abs(k) < EPS_DELTA:
                        raise InvariantViolation(f"resonant denominator at {key}")
                    ka = n1 * aas[0] + n2 * aas[1] - aas[j]
                    state.delta_table[key] = UniSeries([k, ka])
                    if z.max_abs() == 0:
                        continue
                    state.zeta_cache[key] = z
                    new_psi[j][:, col] = solve_irregular_ode(z, k, ka / k).c
                else:
                    new_T[j][:, col] = z.c
        psi = [MultiSeries(c, K, D) for c in new_psi]
        T = [MultiSeries(c, K, D) for c in new_T]
    state.psi1, state.psi2, state.T1, state.T2 = psi[0], psi[1], T[0], T[1]
    if psi[0].is_zero() and psi[1].is_zero():
        return state, Y3, ConjugacyMap.identity(K, D, ("straighten",))
    Psi = ConjugacyMap(y1 + psi[0], y2 + psi[1], True, ("straighten_inverse",))
    phi = Psi.inverse()
    phi = ConjugacyMap(phi.comp_y1, phi.comp_y2, True, ("straighten",))
    Y_prep = _field(lin1 + T[0], lin2 + T[1], lam)
    return state, Y_prep, phi


# ---------------------------------------------------------------------------
# stage 7: radial and tangential flows
# ---------------------------------------------------------------------------


def _v_recursion(rhs: UniSeries, a: complex, k: int, coupling: UniSeries | None = None) -> tuple[UniSeries, float]:
    """Solve ``v (a + 2 c(v)) t' + (k - 1) t = -rhs`` with ``t(0) = 0``.

    ``coupling`` is ``c(v)`` (the resonant data entering only at ``k = 1``).
    Returns the solution and the largest ``1/|a j + k - 1|`` used.
    """
    n = rhs.order
    t = np.zeros(n, dtype=complex)
    cond = 1.0
    r = coupling.c if coupling is not None else np.zeros(n, dtype=complex)
    if abs(rhs[0]) > EPS_PIPELINE and k == 1:
        raise InvariantViolation("resonant data has a constant term at x^1")
    for j in range(0 if k > 1 else 1, n):
        den = a * j + k - 1
        if abs(den) < 1e-9:
            raise DegenerateResidue(f"(k - 1) + a j vanishes at k = {k}, j = {j}")
        cond = max(cond, 1.0 / abs(den))
        s = -rhs[j]
        for i in range(1, j):
            s -= 2 * r[i] * (j - i) * t[j - i]
        t[j] = s / den
    return UniSeries(t), cond


def _solve_lc(rhs: MultiSeries, unit: MultiSeries) -> MultiSeries:
    """``L_C s = rhs / unit`` for non-resonant ``rhs`` (x^0 unit ``lam + d(v)``)."""
    q = rhs * unit.reciprocal()
    _, nonres = resonant_split(q)
    tab = monomial_table(rhs.D)
    lc = (tab.mono[:, 1] - tab.mono[:, 0]).astype(float)
    lc[lc == 0] = 1.0
    return nonres.scale_monomials(lambda m, n1, n2: 1.0 / lc + 0 * m)


def _flow_pushforward(
    tau: MultiSeries, weights: tuple[int, int], D_: MultiSeries, R_: MultiSeries, LY: MultiSeries
) -> tuple[MultiSeries, MultiSeries]:
    """Update ``(D, R)`` under ``y -> y e^{w tau}``.

    Radial (``w = (1, 1)``): ``R <- (R + L_Y tau) o Lambda^{-1}``;
    tangential (``w = (-1, 1)``): ``D <- (D + L_Y sigma) o Gamma^{-1}``.
    """
    s = exp_flow_inverse_time(tau, weights)
    inv = exp_flow_map(s, weights)
    if weights == (1, 1):
        R_new = compose_fibered(R_ + LY, inv.comp_y1, inv.comp_y2)
        D_new = compose_fibered(D_, inv.comp_y1, inv.comp_y2)
    else:
        D_new = compose_fibered(D_ + LY, inv.comp_y1, inv.comp_y2)
        R_new = compose_fibered(R_, inv.comp_y1, inv.comp_y2)
    return D_new, R_new


def _prepared_vector_field(lam, a1, a2, D_, R_) -> PolyVectorField:
    K, Dg = D_.K, D_.D
    x = MultiSeries.x(K, Dg)
    y1, y2 = MultiSeries.y1(K, Dg), MultiSeries.y2(K, Dg)
    return PolyVectorField(
        x * x, y1 * (-lam + a1 * x - D_ + R_), y2 * (lam + a2 * x + D_ + R_)
    )


def normalize_to_order(
    Y_prep: SaddleNodeField, N: int
) -> tuple[NormalFormData, SaddleNodeField, ConjugacyMap]:
    """Kill the ``x``-dependence of ``D`` and ``R`` below ``x^N``.

    For ``k = 1, ..., N - 1``: a radial flow of time
    ``x^{k-1} tau0(v) + x^k tau1(y)`` removes ``R_k``, then a tangential
    flow of time ``x^{k-1} sigma0(v) + x^k sigma1(y)`` removes the part of
    ``D_k`` beyond ``d(v)``.
    """
    K, Dg = Y_prep.K, Y_prep.D
    lam = Y_prep.lam
    if N < 1:
        raise ConfigError("order N must be at least 1")
    if N > K:
        raise ConfigError(f"order N = {N} exceeds the x-truncation K = {K}")
    a1, a2, D_, R_ = prepared_parts(Y_prep)
    a = a1 + a2
    if is_nonpositive_rational(a):
        raise DegenerateResidue(f"residue {a} lies in Q<=0")
    y1, y2 = MultiSeries.y1(K, Dg), MultiSeries.y2(K, Dg)
    total = ConjugacyMap.identity(K, Dg, ("normalize",))
    cond = 1.0
    d_hist = [D_.v_coeff(0)]
    # a radial time x^(k-1) tau0(v) rescales v and feeds a resonant term back
    # into D at x^(k-1); the tangential step of that level is then repeated
    schedule = []
    for k in range(1, N):
        schedule.append(("radial", k))
        if k > 1:
            schedule.append(("tangential", k - 1))
        schedule.append(("tangential", k))
    for kind, k in schedule:
        target = R_ if kind == "radial" else D_
        slab = target.x_part(k, k).mul_x(-k)
        res, nonres = resonant_split(slab)
        rk = res.v_coeff(0)
        coupling = None
        if kind == "radial" and k == 1:
            coupling = rk
        t0, c = _v_recursion(rk, a, k, coupling)
        cond = max(cond, c)
        d0 = MultiSeries.from_v_series(D_.v_coeff(0), K, Dg)
        unit = lam + d0
        vdt = MultiSeries.from_v_series(t0.deriv().shift(1), K, Dg)
        rhs = -nonres
        if coupling is not None:
            rhs = -(nonres * (1.0 + 2.0 * vdt))
        t1 = _solve_lc(rhs, unit).truncate_x(1)
        tau = MultiSeries.from_v_series(t0, K, Dg, k - 1) + t1.mul_x(k)
        if tau.is_zero():
            if kind == "tangential":
                d_hist.append(D_.v_coeff(0))
            continue
        weights = (1, 1) if kind == "radial" else (-1, 1)
        Yf = _prepared_vector_field(lam, a1, a2, D_, R_)
        LY = lie_derivative(Yf, tau)
        D_, R_ = _flow_pushforward(tau, weights, D_, R_, LY)
        # total <- flow o total
        e = compose_fibered(tau, total.comp_y1, total.comp_y2)
        total = ConjugacyMap(
            total.comp_y1 * (weights[0] * e).exp(),
            total.comp_y2 * (weights[1] * e).exp(),
            True,
            total.provenance,
        )
        if kind == "tangential":
            d_hist.append(D_.v_coeff(0))
    G1 = (-D_ + R_).v_coeff(0)
    G2 = (D_ + R_).v_coeff(0)
    c1 = UniSeries(np.concatenate([[0.0], G1.c[1:]]))
    c2 = UniSeries(np.concatenate([[0.0], G2.c[1:]]))
    # remainder below x^N beyond the normal form
    D_def = D_ - MultiSeries.from_v_series(D_.v_coeff(0), K, Dg)
    rem = max(D_def.max_abs(N), R_.max_abs(N))
    # the killed slabs hold roundoff only; store them as exact zeros
    D_ = MultiSeries.from_v_series(D_.v_coeff(0), K, Dg) + D_def.x_part(N)
    R_ = R_.x_part(N)
    Y_N = prepared_field(lam, a1, a2, D_, R_)
    data = NormalFormData(
        lam, a1, a2, c1, c2, D_.v_coeff(0), {"normalize": rem}, d_hist, cond
    )
    return data, Y_N, ConjugacyMap(total.comp_y1, total.comp_y2, True, ("normalize",))


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


def _compose_all(maps: list[ConjugacyMap]) -> ConjugacyMap:
    """``maps[-1] o ... o maps[0]``."""
    total = maps[0]
    for m in maps[1:]:
        if m.provenance and m.comp_y1.allclose(MultiSeries.y1(m.K, m.D), 0.0) and m.comp_y2.allclose(
            MultiSeries.y2(m.K, m.D), 0.0
        ):
            continue
        total = m.compose(total)
    return total


def _y_constant_valuation(phi: ConjugacyMap) -> int | None:
    vals = []
    for c in (phi.comp_y1, phi.comp_y2):
        col = c.table[:, 0]
        nz = np.nonzero(col)[0]
        if len(nz):
            vals.append(int(nz[0]))
    return min(vals) if vals else None


def run_pipeline(
    Y: SaddleNodeField,
    N: int,
    K: int | None = None,
    D: int | None = None,
    orbital_method: Literal["auto", "gamma", "general"] = "auto",
) -> PipelineResult:
    """Run every stage and keep the intermediate data."""
    K = Y.K if K is None else K
    D = Y.D if D is None else D
    if D < 2 * N:
        raise ConfigError(f"y-degree D = {D} must be at least 2N = {2 * N}")
    if N > K:
        raise ConfigError(f"order N = {N} exceeds the x-truncation K = {K}")
    if (K, D) != (Y.K, Y.D):
        Y = Y.with_field(
            PolyVectorField(
                MultiSeries.monomial(2, 0, 0, K, D),
                Y.comp_y1.with_orders(K, D),
                Y.comp_y2.with_orders(K, D),
            )
        )
    if classify(Y) == "degenerate":
        raise DegenerateResidue(f"residue {Y.residue} lies in Q<=0")
    stages: dict[str, ConjugacyMap] = {}
    fields: dict[str, SaddleNodeField] = {"input": Y}
    rem: dict[str, float] = {}
    if Y.is_diagonal():
        Yd, phi_d = Y, ConjugacyMap.identity(K, D, ("diagonalize",))
    else:
        Yd, phi_d = diagonalize_constant_linear_part(Y)
    stages["diagonalize"] = phi_d
    fields["diagonalize"] = Yd
    y_hat, Y1, phi_c = center_manifold(Yd)
    stages["center_manifold"] = phi_c
    fields["center_manifold"] = Y1
    rem["center_manifold"] = max(Y1.comp_y1.table[:, 0].__abs__().max(), Y1.comp_y2.table[:, 0].__abs__().max())
    Y1b, phi_o, d0 = linearize_restriction(Y1, orbital_method)
    stages["orbital_x0"] = phi_o
    fields["orbital_x0"] = Y1b
    r1, r2 = restrict_to_x0(Y1b)
    rem["orbital_x0"] = proportionality_defect((r1, r2))
    p1, p2, Y2, phi_p = diagonalize_linear_terms(Y1b)
    stages["riccati"] = phi_p
    fields["riccati"] = Y2
    A = Y2.linear_part()
    rem["riccati"] = max(A[0][1].max_abs(), A[1][0].max_abs())
    q1, q2, Y3, phi_q = scalar_gauge(Y2)
    stages["gauge"] = phi_q
    fields["gauge"] = Y3
    A = Y3.linear_part()
    rem["gauge"] = max(A[0][0].shift(-2).max_abs(), A[1][1].shift(-2).max_abs())
    state, Yp, phi_s = straighten_hypersurfaces(Y3)
    stages["straighten"] = phi_s
    fields["straighten"] = Yp
    rem["straighten"] = state.selection_rule_defect()
    data, Y_N, phi_n = normalize_to_order(Yp, N)
    stages["normalize"] = phi_n
    fields["normalize"] = Y_N
    data.stage_remainders = {**rem, **data.stage_remainders}
    total = _compose_all([phi_d, phi_c, phi_o, phi_p, phi_q, phi_s, phi_n])
    tangent = bool(np.allclose(total.linear_part(), np.eye(2), atol=EPS_PIPELINE)) and phi_c.is_tangent_to_identity
    total = ConjugacyMap(
        total.comp_y1,
        total.comp_y2,
        tangent,
        tuple(s for s, m in stages.items()),
    )
    _, _, D_, R_ = prepared_parts(Y_N)
    return PipelineResult(data, total, Y_N, stages, fields, y_hat, D_, R_, N, _y_constant_valuation(total))


def normalize(
    Y: SaddleNodeField, N: int, K: int | None = None, D: int | None = None, **kwargs
) -> tuple[NormalFormData, ConjugacyMap, SaddleNodeField]:
    """Normalize ``Y`` up to ``O(x^N)``; returns ``(data, map, Y_N)``."""
    r = run_pipeline(Y, N, K, D, **kwargs)
    return r.data, r.map, r.Y_N


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class ConjugacyResidual:
    comp_y1: MultiSeries
    comp_y2: MultiSeries
    mask: np.ndarray
    max_abs: float


def verify_conjugacy(
    Y: SaddleNodeField | PolyVectorField,
    phi: ConjugacyMap,
    Y_target: SaddleNodeField | PolyVectorField,
    x_below: int | None = None,
) -> ConjugacyResidual:
    """``D Phi . Y - Y_target o Phi`` with the honest-degree mask applied.

    When ``Phi`` has pure ``x`` terms of valuation ``nu`` the substitution
    is exact only for ``n + floor(m / nu) <= D``; the reported maximum is
    taken over those coefficients (and ``m < x_below`` when given).
    """
    F = Y.field if isinstance(Y, SaddleNodeField) else Y
    G = Y_target.field if isinstance(Y_target, SaddleNodeField) else Y_target
    r = []
    for i, ph in enumerate((phi.comp_y1, phi.comp_y2)):
        lhs = lie_derivative(F, ph)
        rhs = compose_fibered((G.comp_y1, G.comp_y2)[i], phi.comp_y1, phi.comp_y2)
        r.append(lhs - rhs)
    nu = _y_constant_valuation(phi)
    mask = honest_mask(phi.K, phi.D, nu, x_below)
    mx = max(rr.max_abs(mask=mask) for rr in r)
    return ConjugacyResidual(r[0], r[1], mask, mx)


def symplectic_defect(phi: ConjugacyMap, x_below: int, y_max: int | None = None) -> float:
    """Max coefficient of ``det D_y Phi - 1`` within the honest window."""
    det = phi.jacobian_det() - 1.0
    nu = _y_constant_valuation(phi)
    y_max = phi.D - 1 if y_max is None else y_max
    mask = honest_mask(phi.K, y_max, None, x_below)
    det = det.with_orders(phi.K, y_max)
    if nu is not None:
        mask &= honest_mask(phi.K, phi.D - 1, nu)[:, : mask.shape[1]]
    return det.max_abs(mask=mask)


# ---------------------------------------------------------------------------
# formal homological equation
# ---------------------------------------------------------------------------


def solve_homological(
    lam: complex,
    a1: complex,
    a2: complex,
    D_: MultiSeries,
    R_: MultiSeries,
    rhs: MultiSeries,
    M: int,
) -> MultiSeries:
    """Formal ``alpha`` with ``L_Z(alpha) = x^{M+1} rhs`` for the prepared ``Z``.

    ``Z = x^2 dx + (-lam + a1 x - D + R) y1 d1 + (lam + a2 x + D + R) y2 d2``
    with ``D = d(v) + O(x)`` and ``R = O(x)``.  For each ``m > M`` the
    resonant part of the ``x^m`` residual fixes the resonant part of
    ``alpha`` at ``x^(m-1)`` through ``(m - 1 + a j) t_j + 2 [r v t']_j``
    (``r`` the resonant ``x^1`` part of ``R``), and the non-resonant part
    fixes ``alpha`` at ``x^m`` through ``(lam + d(v)) L_C``.  The solution
    is unique among series without constant term.
    """
    K, Dg = rhs.K, rhs.D
    a = a1 + a2
    Zf = _prepared_vector_field(lam, a1, a2, D_, R_)
    target = rhs.mul_x(M + 1)
    alpha = MultiSeries.zeros(K, Dg)
    unit = lam + MultiSeries.from_v_series(D_.v_coeff(0), K, Dg)
    r1 = resonant_split(R_.x_part(1, 1).mul_x(-1))[0].v_coeff(0)
    for m in range(M + 1, K):
        resid = target - lie_derivative(Zf, alpha)
        res, _ = resonant_split(resid.x_part(m, m).mul_x(-m))
        rk = res.v_coeff(0)
        if m == 1 and abs(rk[0]) > EPS_PIPELINE:
            raise InvariantViolation("right-hand side has a y-free term at x^1")
        t, _ = _v_recursion(-rk, a, m, r1)
        alpha = alpha + MultiSeries.from_v_series(t, K, Dg, m - 1)
        resid = target - lie_derivative(Zf, alpha)
        _, nonres = resonant_split(resid.x_part(m, m).mul_x(-m))
        alpha = alpha + _solve_lc(nonres, unit).truncate_x(1).mul_x(m)
    return alpha
