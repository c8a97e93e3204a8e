"""
The first Painlevé equation at its irregular singularity at infinity.

The (P_I) Hamiltonian system in Boutroux coordinates

    z2 = y2 x^(-3/5),  z1 = y1 x^(-2/5),  t = x^(-4/5)

becomes, after multiplication by ``-(4/5) x^(1/5)`` and the translation
``y1 <- y1 + zeta`` (``6 zeta^2 = -1``), a polynomial doubly-resonant
saddle-node with residue 1 whose transverse structure is Hamiltonian for
``omega = dy1 ^ dy2 / x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .saddle_node import SaddleNodeField
from .series_core import (
    ConjugacyMap,
    MultiSeries,
    PolyVectorField,
    honest_mask,
    monomial_table,
)

ZETA = 1j / np.sqrt(6.0)
EPS_IDEAL = 1e-10
EPS_SYMPLECTIC = 1e-8
FD_STEP = 1e-5

__all__ = [
    "ZETA",
    "ShapeError",
    "HamiltonianSystem",
    "TransverseStructure",
    "HamiltonianCertificate",
    "p1_hamiltonian",
    "p1_field",
    "boutroux_transform",
    "check_transversally_hamiltonian",
    "check_transversally_symplectic",
    "omega_lie_coefficient",
]


class ShapeError(ValueError):
    """Input does not have the expected Hamiltonian or chart shape."""


@dataclass(frozen=True)
class TransverseStructure:
    """``omega = dy1 ^ dy2 / x`` tested modulo the ideal ``<dx>``."""

    form_label: str = "dy1^dy2/x"
    ideal_tolerance: float = EPS_IDEAL


@dataclass(frozen=True)
class HamiltonianSystem:
    """Non-autonomous polynomial Hamiltonian ``H(t, z1, z2)``.

    ``coeffs`` maps ``(k, a, b)`` to the coefficient of ``t^k z1^a z2^b``.
    The induced field is ``d/dt - dH/dz2 d/dz1 + dH/dz1 d/dz2``.
    """

    coeffs: Mapping[tuple[int, int, int], complex]

    def z1_dot(self) -> dict[tuple[int, int, int], complex]:
        out: dict[tuple[int, int, int], complex] = {}
        for (k, a, b), c in self.coeffs.items():
            if b:
                key = (k, a, b - 1)
                out[key] = out.get(key, 0) - b * c
        return out

    def z2_dot(self) -> dict[tuple[int, int, int], complex]:
        out: dict[tuple[int, int, int], complex] = {}
        for (k, a, b), c in self.coeffs.items():
            if a:
                key = (k, a - 1, b)
                out[key] = out.get(key, 0) + a * c
        return out

    def __call__(self, t, z1, z2):
        return sum(c * t**k * z1**a * z2**b for (k, a, b), c in self.coeffs.items())


def p1_hamiltonian() -> HamiltonianSystem:
    """``H = 2 z1^3 + t z1 - z2^2 / 2``."""
    return HamiltonianSystem({(0, 3, 0): 2.0, (1, 1, 0): 1.0, (0, 0, 2): -0.5})


def p1_field(K: int = 10, D: int = 8) -> SaddleNodeField:
    """The compactified (P_I) field (before diagonalization).

    ``x^2 dx + (-4/5 y2 + 2/5 x y1 + 2 zeta/5 x) dy1
    + (-24/5 y1^2 - 48 zeta/5 y1 + 3/5 x y2) dy2``.
    """
    z = ZETA
    c1 = MultiSeries.from_dict({(0, 0, 1): -0.8, (1, 1, 0): 0.4, (1, 0, 0): 0.4 * z}, K, D)
    c2 = MultiSeries.from_dict({(0, 2, 0): -4.8, (0, 1, 0): -9.6 * z, (1, 0, 1): 0.6}, K, D)
    return SaddleNodeField.from_components(c1, c2)


def _chart_exponent(shift: int, k: int, a: int, b: int) -> int:
    """Power of ``x`` carried by ``t^k z1^a z2^b`` in a component of weight ``shift``."""
    e = Fraction(shift - 4 * k - 2 * a - 3 * b, 5)
    if e.denominator != 1 or e < 0:
        raise ShapeError(f"monomial t^{k} z1^{a} z2^{b} leaves a fractional or negative power x^{e}")
    return int(e)


def boutroux_transform(
    H: HamiltonianSystem, K: int = 10, D: int = 8, zeta: complex | None = ZETA
) -> SaddleNodeField | PolyVectorField:
    """Rewrite the Hamiltonian field in Boutroux coordinates.

    The multiplier ``-(4/5) x^(1/5)`` is applied symbolically: ``dz1/dt``
    monomials ``t^k z1^a z2^b`` land on ``x^((3 - 4k - 2a - 3b)/5)`` in
    ``dy1`` and ``dz2/dt`` ones on ``x^((4 - 4k - 2a - 3b)/5)`` in ``dy2``;
    the chart itself contributes ``2/5 x y1 dy1 + 3/5 x y2 dy2``.  With
    ``zeta`` given, ``y1`` is then translated by ``zeta`` and a
    ``SaddleNodeField`` is returned; with ``zeta=None`` the raw field is
    returned.
    """
    d1: dict[tuple[int, int, int], complex] = {(1, 1, 0): 0.4}
    d2: dict[tuple[int, int, int], complex] = {(1, 0, 1): 0.6}
    for src, dst, shift in ((H.z1_dot(), d1, 3), (H.z2_dot(), d2, 4)):
        for (k, a, b), c in src.items():
            if c == 0:
                continue
            m = _chart_exponent(shift, k, a, b)
            if a + b > D:
                raise ShapeError(f"y-degree {a + b} exceeds D = {D}")
            key = (m, a, b)
            dst[key] = dst.get(key, 0) - 0.8 * c
    c1 = MultiSeries.from_dict(d1, K, D)
    c2 = MultiSeries.from_dict(d2, K, D)
    if zeta is None:
        return PolyVectorField(MultiSeries.monomial(2, 0, 0, K, D), c1, c2)
    # f(y1 + zeta) = sum_j zeta^j / j! d^j f / dy1^j (exact for polynomials)
    out = []
    for c in (c1, c2):
        acc = MultiSeries.zeros(K, D)
        term = c
        fact = 1.0
        for j in range(D + 1):
            acc = acc + (zeta**j / fact) * term
            term = term.deriv_y1()
            fact *= j + 1
        out.append(acc)
    if abs(out[0].constant_term()) > EPS_IDEAL or abs(out[1].constant_term()) > EPS_IDEAL:
        raise ShapeError("translation does not move the singular point to the origin")
    c1 = out[0] - out[0].constant_term()
    c2 = out[1] - out[1].constant_term()
    return SaddleNodeField.from_components(c1, c2)


# ---------------------------------------------------------------------------
# transverse structure
# ---------------------------------------------------------------------------


@dataclass
class HamiltonianCertificate:
    is_hamiltonian: bool
    dx_in_ideal: bool
    max_offending: float
    offending: dict[tuple[int, int, int], complex] = field(default_factory=dict)


def omega_lie_coefficient(Y: PolyVectorField | SaddleNodeField) -> MultiSeries:
    """``x`` times the ``dy1 ^ dy2`` coefficient of ``L_Y(dy1 ^ dy2 / x)``.

    For ``Y = x^2 dx + ...`` this equals ``div_y Y - x``.
    """
    F = Y.field if isinstance(Y, SaddleNodeField) else Y
    div = F.comp_y1.deriv_y1() + F.comp_y2.deriv_y2()
    # Y(1/x) = -Y_x / x^2 contributes -Y_x / x to the x-rescaled coefficient
    return div - F.comp_x.mul_x(-1)


def check_transversally_hamiltonian(
    Y: PolyVectorField | SaddleNodeField, structure: TransverseStructure = TransverseStructure()
) -> HamiltonianCertificate:
    """Both ``L_Y(dx)`` and ``L_Y(omega)`` lie in ``<dx>``.

    ``L_Y(dx) = d(Y_x)`` is in ``<dx>`` iff ``Y_x`` depends on ``x`` only.
    """
    F = Y.field if isinstance(Y, SaddleNodeField) else Y
    tab = monomial_table(F.D)
    dx_ok = bool(np.all(np.abs(F.comp_x.table[:, tab.deg > 0]) <= structure.ideal_tolerance))
    coef = omega_lie_coefficient(F)
    bad = {tuple(k): v for k, v in coef.coeffs.items() if abs(v) > structure.ideal_tolerance}
    mx = coef.max_abs()
    return HamiltonianCertificate(dx_ok and not bad, dx_ok, mx, bad)


def check_transversally_symplectic(
    phi: ConjugacyMap | Callable,
    x_below: int | None = None,
    samples: Sequence[tuple[complex, complex, complex]] | None = None,
    tol: float = EPS_SYMPLECTIC,
) -> tuple[bool, float]:
    """``det D_y Phi = 1``.

    For a ``ConjugacyMap`` the test is coefficientwise on the window where
    the truncation is exact (``x``-degree below ``x_below``, ``y``-degree
    below ``D``); for a pointwise map ``phi(x, y1, y2) -> (y1', y2')`` it
    uses central differences at ``samples``.
    """
    if isinstance(phi, ConjugacyMap):
        det = phi.jacobian_det() - 1.0
        K, D = phi.K, phi.D
        nu = None
        for c in (phi.comp_y1, phi.comp_y2):
            nz = np.nonzero(c.table[:, 0])[0]
            if len(nz):
                nu = int(nz[0]) if nu is None else min(nu, int(nz[0]))
        # derivatives lose one y-degree
        mask = honest_mask(K, D - 1, nu, x_below)
        det = det.with_orders(K, D - 1)
        worst = det.max_abs(mask=mask)
        return worst <= tol, worst
    if samples is None:
        raise ValueError("pointwise maps need sample points")
    h = FD_STEP
    worst = 0.0
    for x, y1, y2 in samples:
        def ev(a, b):
            return np.asarray(phi(x, a, b), dtype=complex)[-2:]

        j1 = (ev(y1 + h, y2) - ev(y1 - h, y2)) / (2 * h)
        j2 = (ev(y1, y2 + h) - ev(y1, y2 - h)) / (2 * h)
        worst = max(worst, abs(j1[0] * j2[1] - j2[0] * j1[1] - 1.0))
    return worst <= tol, float(worst)
