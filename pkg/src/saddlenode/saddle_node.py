"""
Diagonal doubly-resonant saddle-nodes

    Y = x^2 d/dx + (-lam y1 + F1) d/dy1 + (lam y2 + F2) d/dy2

with their spectral data, classification, the constant linear
diagonalization and the orbital linearization of the restriction to
``{x = 0}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal, Mapping

import numpy as np

from .series_core import (
    ConjugacyMap,
    MultiSeries,
    PolyVectorField,
    SeriesError,
    UniSeries,
    apply_lc,
    compose_fibered,
    monomial_table,
    resonant_split,
)

EPS_RES = 1e-9
Q_MAX = 64
EPS_OBSTRUCTION = 1e-8
EPS_SPECTRUM = 1e-9

Classification = Literal["degenerate", "non_degenerate", "strictly_non_degenerate"]


class NotASaddleNode(ValueError):
    """The constant linear part does not have two opposite nonzero eigenvalues."""


class FieldShapeError(ValueError):
    """The field does not have the saddle-node shape."""


class NotDivIntegrable(ValueError):
    """The restriction to ``{x = 0}`` is not orbitally linearizable at this order."""


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaddleNodeField:
    """Saddle-node field with its spectral data.

    Attributes
    ----------
    field : PolyVectorField
        The vector field; ``comp_x`` is ``x^2``.
    lam : complex
        Eigenvalue ``lam`` (the spectrum of the constant linear part is
        ``{-lam, lam}``).
    a1, a2 : complex
        ``x``-coefficients of the diagonal entries of the linear part
        ``A(x)``; only meaningful once the linear part is diagonal.
    residue : complex
        ``(Tr A(x) / x)`` at ``x = 0``.
    """

    field: PolyVectorField
    lam: complex
    a1: complex
    a2: complex
    residue: complex

    @property
    def K(self) -> int:
        return self.field.K

    @property
    def D(self) -> int:
        return self.field.D

    @property
    def comp_y1(self) -> MultiSeries:
        return self.field.comp_y1

    @property
    def comp_y2(self) -> MultiSeries:
        return self.field.comp_y2

    @classmethod
    def from_components(
        cls, comp_y1: MultiSeries, comp_y2: MultiSeries, lam: complex | None = None
    ) -> "SaddleNodeField":
        """Validate the saddle-node shape and extract the spectral data."""
        comp_y1._check(comp_y2)
        K, D = comp_y1.K, comp_y1.D
        if K < 3:
            raise FieldShapeError("x-order K must be at least 3 to hold x^2")
        for name, c in (("comp_y1", comp_y1), ("comp_y2", comp_y2)):
            if abs(c.constant_term()) > EPS_SPECTRUM:
                raise FieldShapeError(f"{name} does not vanish at the origin")
        comp_x = MultiSeries.monomial(2, 0, 0, K, D)
        field = PolyVectorField(comp_x, comp_y1, comp_y2)
        A = linear_part(field)
        A0 = np.array([[A[i][j][0] for j in range(2)] for i in range(2)])
        ev = np.linalg.eigvals(A0)
        _check_opposite(ev)
        lam_ev = _principal(ev)
        if lam is None:
            lam = lam_ev
        elif min(abs(lam - lam_ev), abs(lam + lam_ev)) > 1e-8 * max(1.0, abs(lam)):
            raise NotASaddleNode(f"declared lambda {lam} does not match the spectrum {ev}")
        res = _residue_from_field(field)
        return cls(field, complex(lam), complex(A[0][0][1]), complex(A[1][1][1]), res)

    def linear_part(self) -> list[list[UniSeries]]:
        return linear_part(self.field)

    def alpha(self) -> tuple[UniSeries, UniSeries]:
        """``F(x, 0)``: the inhomogeneous term."""
        return UniSeries(self.comp_y1.table[:, 0]), UniSeries(self.comp_y2.table[:, 0])

    def is_diagonal(self, tol: float = EPS_SPECTRUM) -> bool:
        A = self.linear_part()
        return (
            abs(A[0][1][0]) < tol
            and abs(A[1][0][0]) < tol
            and abs(A[0][0][0] + self.lam) < tol
            and abs(A[1][1][0] - self.lam) < tol
        )

    def with_field(self, field: PolyVectorField) -> "SaddleNodeField":
        return SaddleNodeField.from_components(field.comp_y1, field.comp_y2, self.lam)

    def to_json_dict(self) -> dict:
        return {
            "lambda": {"re": self.lam.real, "im": self.lam.imag},
            "components": {
                "comp_y1": self.comp_y1.to_json_dict(),
                "comp_y2": self.comp_y2.to_json_dict(),
            },
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "SaddleNodeField":
        try:
            comps = data["components"]
            c1 = MultiSeries.from_json_dict(comps["comp_y1"])
            c2 = MultiSeries.from_json_dict(comps["comp_y2"])
        except (KeyError, TypeError) as exc:
            raise FieldShapeError(f"missing field entry: {exc}") from exc
        lam = None
        if data.get("lambda") is not None:
            lam = complex(float(data["lambda"].get("re", 0.0)), float(data["lambda"].get("im", 0.0)))
        if (c1.K, c1.D) != (c2.K, c2.D):
            raise FieldShapeError("components carry different truncation orders")
        return cls.from_components(c1, c2, lam)


@dataclass(frozen=True)
class BasisFields:
    """``C = -y1 d1 + y2 d2``, ``R = y1 d1 + y2 d2`` and ``Y0``."""

    C_basis: PolyVectorField
    R_basis: PolyVectorField
    Y0: PolyVectorField


def basis_fields(lam: complex, a1: complex, a2: complex, K: int, D: int) -> BasisFields:
    z = MultiSeries.zeros(K, D)
    x = MultiSeries.x(K, D)
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    C = PolyVectorField(z, -y1, y2)
    R = PolyVectorField(z, y1, y2)
    Y0 = PolyVectorField(x * x, (-lam + a1 * x) * y1, (lam + a2 * x) * y2)
    return BasisFields(C, R, Y0)


# ---------------------------------------------------------------------------
# spectral data
# ---------------------------------------------------------------------------


def _check_opposite(ev: np.ndarray) -> None:
    if abs(ev[0] + ev[1]) > EPS_SPECTRUM * max(1.0, abs(ev[0])) or min(abs(ev)) < EPS_SPECTRUM:
        raise NotASaddleNode(f"eigenvalues {ev} are not opposite and nonzero")


def _principal(ev: np.ndarray) -> complex:
    """The eigenvalue with argument in ``(-pi/2, pi/2]``."""
    for e in ev:
        ang = math.atan2(e.imag, e.real)
        if -math.pi / 2 < ang <= math.pi / 2 + 1e-15:
            return complex(e)
    return complex(-ev[0])


def linear_part(Y: PolyVectorField) -> list[list[UniSeries]]:
    """``A(x)``: entry ``[i][j]`` is the coefficient of ``y_j`` in ``comp_y_i``."""
    out = []
    for comp in (Y.comp_y1, Y.comp_y2):
        out.append([comp.x_coeff(1, 0), comp.x_coeff(0, 1)])
    return out


def _residue_from_field(Y: PolyVectorField) -> complex:
    """Trace readoff, corrected for a linear term in ``F(x, 0)``.

    A term ``alpha_1 x`` in ``F(x, 0)`` moves the center manifold by
    ``y_hat = x u + O(x^2)`` with ``A(0) u = -alpha_1``; the trace of the
    linear part then picks up ``sum_ij d^2 F_i/dy_i dy_j u_j``.
    """
    A = linear_part(Y)
    tr1 = A[0][0][1] + A[1][1][1]
    alpha1 = np.array([Y.comp_y1.coeff(1, 0, 0), Y.comp_y2.coeff(1, 0, 0)])
    if not np.any(np.abs(alpha1) > 0):
        return complex(tr1)
    A0 = np.array([[A[i][j][0] for j in range(2)] for i in range(2)])
    u = np.linalg.solve(A0, -alpha1)
    # second derivatives at the origin (x^0)
    c1, c2 = Y.comp_y1, Y.comp_y2
    h1 = np.array([[2 * c1.coeff(0, 2, 0), c1.coeff(0, 1, 1)], [c1.coeff(0, 1, 1), 2 * c1.coeff(0, 0, 2)]])
    h2 = np.array([[2 * c2.coeff(0, 2, 0), c2.coeff(0, 1, 1)], [c2.coeff(0, 1, 1), 2 * c2.coeff(0, 0, 2)]])
    corr = h1[0] @ u + h2[1] @ u
    return complex(tr1 + corr)


def residue(Y: SaddleNodeField | PolyVectorField) -> complex:
    """``(Tr A(x) / x)|_{x=0}``."""
    field = Y.field if isinstance(Y, SaddleNodeField) else Y
    return _residue_from_field(field)


def classify(Y: SaddleNodeField | complex) -> Classification:
    """Degenerate iff the residue is (numerically) in ``Q_{<=0}``."""
    res = Y.residue if isinstance(Y, SaddleNodeField) else complex(Y)
    if res.real > 0:
        return "strictly_non_degenerate"
    if is_nonpositive_rational(res):
        return "degenerate"
    return "non_degenerate"


def is_nonpositive_rational(z: complex, eps: float = EPS_RES, q_max: int = Q_MAX) -> bool:
    """``z`` within ``eps`` of some ``-p/q`` with ``0 <= p`` and ``q <= q_max``."""
    if abs(z.imag) > eps or z.real > eps:
        return False
    fr = Fraction(-z.real).limit_denominator(q_max)
    return abs(-z.real - float(fr)) <= eps


# ---------------------------------------------------------------------------
# diagonalization
# ---------------------------------------------------------------------------


def diagonalize_constant_linear_part(Y: PolyVectorField | SaddleNodeField) -> tuple[SaddleNodeField, ConjugacyMap]:
    """Bring ``A(0)`` to ``diag(-lam, lam)`` by a constant linear map with unit determinant.

    Returns the new field and the map ``y -> z = P^{-1} y`` (old to new),
    where the columns of ``P`` are eigenvectors for ``-lam`` and ``lam``.
    """
    field = Y.field if isinstance(Y, SaddleNodeField) else Y
    K, D = field.K, field.D
    A = linear_part(field)
    A0 = np.array([[A[i][j][0] for j in range(2)] for i in range(2)], dtype=complex)
    ev, vec = np.linalg.eig(A0)
    _check_opposite(ev)
    lam = _principal(ev)
    i_minus = int(np.argmin(np.abs(ev + lam)))
    i_plus = 1 - i_minus
    vm = vec[:, i_minus].copy()
    vp = vec[:, i_plus].copy()
    # normalise: dominant component of each eigenvector real positive
    vm /= vm[np.argmax(np.abs(vm))] / abs(vm[np.argmax(np.abs(vm))])
    vp /= vp[np.argmax(np.abs(vp))] / abs(vp[np.argmax(np.abs(vp))])
    if abs(vm[0]) < abs(vm[1]) and abs(vp[1]) < abs(vp[0]):
        pass  # genuinely swapped basis, keep order -lam first
    P = np.column_stack([vm, vp])
    P[:, 1] /= np.linalg.det(P)
    Pinv = np.linalg.inv(P)
    # new field: z' = P^{-1} f(x, P z)
    z1, z2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    s1 = P[0, 0] * z1 + P[0, 1] * z2
    s2 = P[1, 0] * z1 + P[1, 1] * z2
    f1 = compose_fibered(field.comp_y1, s1, s2)
    f2 = compose_fibered(field.comp_y2, s1, s2)
    g1 = Pinv[0, 0] * f1 + Pinv[0, 1] * f2
    g2 = Pinv[1, 0] * f1 + Pinv[1, 1] * f2
    # clean the constant linear part exactly
    tab = monomial_table(D)
    t1, t2 = g1.table.copy(), g2.table.copy()
    i10, i01 = tab.index[(1, 0)], tab.index[(0, 1)]
    t1[0, i10], t1[0, i01] = -lam, 0.0
    t2[0, i10], t2[0, i01] = 0.0, lam
    g1, g2 = MultiSeries(t1, K, D, g1.valid_x), MultiSeries(t2, K, D, g2.valid_x)
    new = SaddleNodeField.from_components(g1, g2, lam)
    phi = ConjugacyMap.linear(Pinv, K, D, ("diagonalize",))
    return new, phi


# ---------------------------------------------------------------------------
# restriction to x = 0 and orbital linearization
# ---------------------------------------------------------------------------


def restrict_to_x0(Y: SaddleNodeField | PolyVectorField) -> tuple[MultiSeries, MultiSeries]:
    """Set ``x = 0`` in the ``y``-components (orders are kept)."""
    field = Y.field if isinstance(Y, SaddleNodeField) else Y
    return field.comp_y1.truncate_x(1), field.comp_y2.truncate_x(1)


def _divide_by_y2(f: MultiSeries) -> MultiSeries:
    tab = monomial_table(f.D)
    c = np.zeros_like(f.table)
    for j, (n1, n2) in enumerate(tab.mono):
        if n2 > 0:
            c[:, tab.index[(int(n1), int(n2) - 1)]] = f.table[:, j]
        elif np.any(f.table[:, j] != 0):
            raise SeriesError("series is not divisible by y2")
    return MultiSeries(c, f.K, f.D, f.valid_x)


def proportionality_defect(restricted: tuple[MultiSeries, MultiSeries]) -> float:
    """Max coefficient of ``y2 X1 + y1 X2``; zero iff ``X = U C``."""
    X1, X2 = restricted
    y1, y2 = MultiSeries.y1(X1.K, X1.D), MultiSeries.y2(X1.K, X1.D)
    return (y2 * X1 + y1 * X2).max_abs(x_below=1)


def orbital_linearize_x0(
    restricted: tuple[MultiSeries, MultiSeries], lam: complex | None = None
) -> tuple[MultiSeries, UniSeries]:
    """Solve for ``gamma`` with ``U (1 - L_C gamma) = lam + d(v)``.

    The restriction must be ``U(y) C`` with ``U = lam + h``.  Degree by
    degree, the non-resonant part of the working right-hand side fixes
    ``gamma`` (division by ``lam (n2 - n1)``) and its resonant part is
    absorbed into ``d``.  The map ``(y1 e^gamma, y2 e^-gamma)`` then pushes
    the restriction to ``(lam + d(v)) C``.
    """
    X1, X2 = (r.truncate_x(1) for r in restricted)
    defect = proportionality_defect((X1, X2))
    if defect > EPS_OBSTRUCTION:
        raise NotDivIntegrable(
            f"restriction is not proportional to the C-basis (obstruction {defect:.3e})"
        )
    K, D = X1.K, X1.D
    U = _divide_by_y2(X2)
    lam0 = U.constant_term()
    if lam is None:
        lam = lam0
    elif abs(lam - lam0) > EPS_SPECTRUM * max(1.0, abs(lam)):
        raise NotASaddleNode(f"linear part {lam0} does not match lambda {lam}")
    tab = monomial_table(D)
    deg = tab.deg
    lc = (tab.mono[:, 1] - tab.mono[:, 0]).astype(float)
    gamma = MultiSeries.zeros(K, D)
    one = MultiSeries.constant(1.0, K, D)
    for n in range(1, D):
        W = (U * (one - apply_lc(gamma))).table[0]
        sel = (deg == n) & ~tab.resonant
        g = gamma.table.copy()
        g[0, sel] = W[sel] / (lam * lc[sel])
        gamma = MultiSeries(g, K, D)
    W = (U * (one - apply_lc(gamma))).truncate_x(1)
    res, nonres = resonant_split(W)
    # the top degree of U (n = D) cannot be corrected: keep degrees < D
    d = res.v_coeff(0)
    d = UniSeries(np.where(2 * np.arange(d.order) < D, d.c, 0.0))
    d = d - lam
    return gamma, d


@dataclass(frozen=True)
class OrbitalNormalForm:
    """Result of the general orbital linearization at ``x = 0``."""

    phi: ConjugacyMap
    d: UniSeries
    max_obstruction: float


def orbital_normal_form_x0(
    restricted: tuple[MultiSeries, MultiSeries], lam: complex
) -> OrbitalNormalForm:
    """Map ``phi`` and unit ``lam + d(v)`` with ``D phi . X = ((lam + d(v)) C) o phi``.

    Works for any restriction with linear part ``diag(-lam, lam)``.  The
    resonant parts of ``phi - Id`` are set to zero; at the resonant
    monomials ``v^k y_i`` the two components must agree on ``d_k``, and a
    mismatch is the obstruction to orbital linearizability.
    """
    X1, X2 = (r.truncate_x(1) for r in restricted)
    K, D = X1.K, X1.D
    tab = monomial_table(D)
    y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    Xf = PolyVectorField(MultiSeries.zeros(K, D), X1, X2)
    lc = (tab.mono[:, 1] - tab.mono[:, 0]).astype(float)
    phi1, phi2 = y1, y2
    d = np.zeros(D // 2 + 1, dtype=complex)
    worst = 0.0
    s = (-1.0, 1.0)
    for n in range(2, D + 1):
        v_phi = phi1 * phi2
        unit = MultiSeries.constant(lam, K, D)
        vp = MultiSeries.constant(1.0, K, D)
        for k in range(1, len(d)):
            vp = vp * v_phi
            if d[k] != 0:
                unit = unit + d[k] * vp
        E = []
        for i, ph in enumerate((phi1, phi2)):
            lhs = ph.deriv_y1() * X1 + ph.deriv_y2() * X2
            E.append((s[i] * unit * ph - lhs).table[0])
        sel = tab.deg == n
        new1, new2 = phi1.table.copy(), phi2.table.copy()
        # non-resonant monomials of each component
        nr1 = sel & (lc != -1.0)
        nr2 = sel & (lc != 1.0)
        new1[0, nr1] += E[0][nr1] / (lam * (lc[nr1] - s[0]))
        new2[0, nr2] += E[1][nr2] / (lam * (lc[nr2] - s[1]))
        if n % 2 == 1:
            k = (n - 1) // 2
            e1 = E[0][tab.index[(k + 1, k)]]
            e2 = E[1][tab.index[(k, k + 1)]]
            obstruction = abs(e1 + e2)
            worst = max(worst, obstruction)
            if obstruction > EPS_OBSTRUCTION:
                raise NotDivIntegrable(
                    f"orbital linearization obstructed at v-degree {k} (|E1 + E2| = {obstruction:.3e})"
                )
            d[k] = 0.5 * (e1 - e2)
        phi1, phi2 = MultiSeries(new1, K, D), MultiSeries(new2, K, D)
    phi = ConjugacyMap(phi1, phi2, True, ("orbital_x0",))
    return OrbitalNormalForm(phi, UniSeries(d), worst)


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------


def random_saddle_node(
    seed: int | np.random.Generator,
    K: int,
    D: int,
    lam: complex = 1.0,
    scale: float = 0.2,
    max_x_degree: int = 3,
    max_y_degree: int = 3,
) -> SaddleNodeField:
    """Seeded div-integrable, strictly non-degenerate saddle-node.

    The restriction to ``{x = 0}`` is the Hamiltonian field of
    ``H = lam y1 y2 + h(y1, y2)`` (hence orbitally linearizable); the
    ``x``-dependent terms are arbitrary and the residue has positive real
    part.
    """
    rng = np.random.default_rng(seed)
    cplx = lambda: scale * complex(rng.normal(), rng.normal())  # noqa: E731
    h = {}
    for n in range(3, max_y_degree + 2):
        for n1 in range(n + 1):
            h[(n1, n - n1)] = cplx()
    d1: dict[tuple[int, int, int], complex] = {}
    d2: dict[tuple[int, int, int], complex] = {}
    # X1 = -dh/dy2, X2 = dh/dy1
    for (n1, n2), c in h.items():
        if n2:
            d1[(0, n1, n2 - 1)] = d1.get((0, n1, n2 - 1), 0) - n2 * c
        if n1:
            d2[(0, n1 - 1, n2)] = d2.get((0, n1 - 1, n2), 0) + n1 * c
    for m in range(1, max_x_degree + 1):
        for n in range(max_y_degree + 1):
            for n1 in range(n + 1):
                d1[(m, n1, n - n1)] = cplx()
                d2[(m, n1, n - n1)] = cplx()
    # residue with positive real part
    res = d1[(1, 1, 0)] + d2[(1, 0, 1)]
    shift = 0.5 + abs(rng.normal()) - res.real
    d1[(1, 1, 0)] += shift / 2
    d2[(1, 0, 1)] += shift / 2
    d1[(0, 1, 0)] = -lam
    d2[(0, 0, 1)] = lam
    c1 = MultiSeries.from_dict(d1, K, D)
    c2 = MultiSeries.from_dict(d2, K, D)
    return SaddleNodeField.from_components(c1, c2, lam)
