"""
Borel transforms, convolution, weighted norms, Pade continuation,
directional Laplace sums and the two singular scalar ODE solvers.

Two Borel conventions are used::

    B(f)(t)  = sum_k f_k t^k / k!
    Bt(f)(t) = sum_k f_{k+1} t^k / k!       (constant f_0 carried aside)

``Bt`` turns products into convolutions ``(g * h)(t) = int_0^t g(s) h(t-s) ds``
up to the constant terms, and the Laplace transform along the ray
``e^{i theta} R_+`` inverts it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import integrate, interpolate, linalg, special

from .series_core import UniSeries

FACT_CONSTANT = 2.0 * math.exp(2.0) / 5.0 + 5.0
TOL_QUAD = 1e-10
EPS_POLE = 1e-3

Kind = Literal["B", "B_bis"]


class BorelError(ValueError):
    """Base class for Borel-Laplace errors."""


class KindError(BorelError):
    """Operands use different Borel conventions."""


class ContinuationFailure(BorelError):
    """The rational continuation has a pole inside the sampled domain."""


class DirectionBlocked(BorelError):
    """A pole of the continuation lies on (or too close to) the Laplace ray."""


class DivergentIntegral(BorelError):
    """The Laplace integral does not converge at the requested point."""


class SingularOperator(BorelError):
    """The requested ODE has a vanishing leading coefficient."""


class ResonanceError(BorelError):
    """``j + k = 0`` for a stored index of the regular ODE."""


class InsufficientData(BorelError):
    """Too few nonzero coefficients for a growth fit."""


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PadeApproximant:
    """Rational function ``num(t)/den(t)`` with ascending coefficients."""

    num: np.ndarray
    den: np.ndarray

    @property
    def order(self) -> tuple[int, int]:
        return len(self.num) - 1, len(self.den) - 1

    @property
    def poles(self) -> np.ndarray:
        d = np.trim_zeros(self.den, "b")
        if len(d) <= 1:
            return np.zeros(0, dtype=complex)
        return np.roots(d[::-1]).astype(complex)

    def __call__(self, t):
        t = np.asarray(t, dtype=complex)
        P = np.polynomial.polynomial.polyval(t, self.num)
        Q = np.polynomial.polynomial.polyval(t, self.den)
        return P / Q

    def pole_report(self, accumulation_radius: float = 0.2, min_cluster: int = 3) -> dict:
        """Pole locations, residue magnitudes and an accumulation flag.

        Poles are flagged as accumulating at the origin when at least
        ``min_cluster`` distinct moduli lie below ``accumulation_radius``,
        or when one pole is closer to 0 than ``EPS_POLE``.  Either way no ray
        through the origin is usable.
        """
        p = self.poles
        mods = np.abs(p)
        order = np.argsort(mods)
        dden = np.polynomial.polynomial.polyder(self.den)
        res = []
        for z in p[order]:
            q1 = np.polynomial.polynomial.polyval(z, dden)
            n = np.polynomial.polynomial.polyval(z, self.num)
            res.append(float(abs(n / q1)) if q1 != 0 else float("inf"))
        small = np.unique(np.round(mods[mods < accumulation_radius], 9))
        min_mod = float(mods.min()) if len(mods) else float("inf")
        return {
            "poles": [[float(z.real), float(z.imag)] for z in p[order]],
            "residues_abs": res,
            "min_modulus": min_mod,
            "accumulating_at_origin": bool(len(small) >= min_cluster or min_mod < EPS_POLE),
        }


@dataclass(frozen=True)
class BorelSeries:
    """Truncated Borel-plane Taylor series.

    Attributes
    ----------
    coeffs : ndarray
        Taylor coefficients at ``t = 0``.
    kind : {"B", "B_bis"}
        Convention used to produce the coefficients.
    constant : complex
        ``f_0`` for ``B_bis`` transforms (zero otherwise).
    pade : PadeApproximant or None
        Optional rational continuation.
    """

    coeffs: np.ndarray
    kind: Kind = "B_bis"
    constant: complex = 0j
    pade: PadeApproximant | None = None

    def __call__(self, t):
        if self.pade is not None:
            return self.pade(t)
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=complex), self.coeffs)

    def __len__(self) -> int:
        return len(self.coeffs)

    def with_pade(self, order: tuple[int, int] | None = None) -> "BorelSeries":
        return BorelSeries(self.coeffs, self.kind, self.constant, pade_continue(self, order))


@dataclass(frozen=True)
class Direction:
    """Domain ``A_{theta,delta} U D(0, rho)`` bisected by ``theta``."""

    theta: float = 0.0
    delta: float = math.pi / 2
    rho: float = 0.5

    def __post_init__(self):
        if not (0 < self.delta < math.pi):
            raise ValueError("opening delta must lie in (0, pi)")
        if self.rho <= 0:
            raise ValueError("disc radius rho must be positive")

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        ang = np.angle(t * np.exp(-1j * self.theta))
        return (np.abs(t) < self.rho) | ((np.abs(ang) < self.delta / 2) & (t != 0))

    def distance_to(self, z: complex) -> float:
        """Euclidean distance from ``z`` to the domain."""
        if self.contains(z):
            return 0.0
        d_disc = max(abs(z) - self.rho, 0.0)
        best = d_disc
        for edge in (self.theta - self.delta / 2, self.theta + self.delta / 2):
            u = np.exp(1j * edge)
            proj = (z * np.conj(u)).real
            best = min(best, abs(z) if proj <= 0 else abs(z - proj * u))
        return float(best)


@dataclass(frozen=True)
class WeightedNormParams:
    """Sampling parameters for grid-sup weighted norms."""

    beta: float
    direction: Direction = field(default_factory=Direction)
    n_radial: int = 400
    n_angular: int = 9
    n_disc_angular: int = 48
    tail_rel: float = 1e-12


@dataclass(frozen=True)
class NormResult:
    value: float
    argmax: complex
    refinement_change: float
    cutoff: float


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _coeffs(f) -> np.ndarray:
    return f.c if isinstance(f, UniSeries) else np.asarray(f, dtype=complex)


def borel(f: UniSeries | Sequence[complex], kind: Kind = "B_bis") -> BorelSeries:
    """Borel transform of a truncated series."""
    c = _coeffs(f)
    if kind == "B":
        return BorelSeries(c / special.factorial(np.arange(len(c))), "B", 0j)
    if kind == "B_bis":
        if len(c) <= 1:
            return BorelSeries(np.zeros(1, dtype=complex), "B_bis", complex(c[0]) if len(c) else 0j)
        k = np.arange(len(c) - 1)
        return BorelSeries(c[1:] / special.factorial(k), "B_bis", complex(c[0]))
    raise KindError(f"unknown kind {kind!r}")


def inverse_borel(g: BorelSeries) -> UniSeries:
    """Coefficients of the formal series whose transform is ``g``."""
    n = len(g.coeffs)
    fac = special.factorial(np.arange(n))
    if g.kind == "B":
        return UniSeries(g.coeffs * fac)
    return UniSeries(np.concatenate([[g.constant], g.coeffs * fac]))


def convolve(g: BorelSeries, h: BorelSeries) -> BorelSeries:
    """Exact ``int_0^t g(s) h(t-s) ds`` of two truncated ``B_bis`` series."""
    if g.kind != "B_bis" or h.kind != "B_bis":
        raise KindError("convolution is defined for B_bis transforms")
    gi = g.coeffs * special.factorial(np.arange(len(g.coeffs)))
    hj = h.coeffs * special.factorial(np.arange(len(h.coeffs)))
    prod = np.convolve(gi, hj)
    n = np.arange(len(prod))
    out = np.zeros(len(prod) + 1, dtype=complex)
    out[1:] = prod / special.factorial(n + 1)
    return BorelSeries(out, "B_bis", 0j)


def borel_product(f: UniSeries, g: UniSeries) -> BorelSeries:
    """``Bt(f g) = f0 Bt(g) + g0 Bt(f) + Bt(f) * Bt(g)`` (exact polynomial product)."""
    bf, bg = borel(f), borel(g)
    conv = convolve(bf, bg)
    n = len(conv.coeffs)
    out = conv.coeffs.copy()
    out[: len(bg.coeffs)] += bf.constant * bg.coeffs
    out[: len(bf.coeffs)] += bg.constant * bf.coeffs
    return BorelSeries(out[:n], "B_bis", bf.constant * bg.constant)


# ---------------------------------------------------------------------------
# Pade continuation
# ---------------------------------------------------------------------------


def pade_continue(g: BorelSeries, order: tuple[int, int] | None = None) -> PadeApproximant:
    """Pade approximant ``[p/q]`` of a Borel-plane series.

    Defaults to the diagonal order ``(n//2, n//2)`` fitting within the
    available coefficients.  A singular or ill-conditioned linear system
    falls back to ``(p-1, q-1)``, which removes spurious pole-zero pairs
    when the series is exactly rational of lower degree.
    """
    c = np.asarray(g.coeffs, dtype=complex)
    n = len(c)
    if order is None:
        q = (n - 1) // 2
        p = n - 1 - q
    else:
        p, q = order
    if p + q + 1 > n:
        raise BorelError(f"Pade order {(p, q)} needs {p + q + 1} coefficients, have {n}")
    # rescale t -> r tau so that the coefficients have comparable size
    nz = np.nonzero(np.abs(c) > 0)[0]
    r = 1.0
    if len(nz) >= 2 and nz[-1] > 0:
        r = float(np.abs(c[nz[-1]] / c[nz[0]]) ** (-1.0 / (nz[-1] - nz[0])))
        r = r if np.isfinite(r) and r > 0 else 1.0
    cs = c * r ** np.arange(n)
    while True:
        if q == 0:
            return PadeApproximant(c[: p + 1].copy(), np.ones(1, dtype=complex))
        try:
            with np.errstate(all="raise"), warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                num, den = interpolate.pade(cs[: p + q + 1], q, p)
            nc = np.asarray(num.coeffs[::-1], dtype=complex)
            nc = nc / r ** np.arange(len(nc))
            dc = np.asarray(den.coeffs[::-1], dtype=complex)
            dc = dc / r ** np.arange(len(dc))
            if not (np.all(np.isfinite(nc)) and np.all(np.isfinite(dc))):
                raise np.linalg.LinAlgError("non-finite Pade coefficients")
            scale = dc[0]
            return PadeApproximant(nc / scale, dc / scale)
        except (np.linalg.LinAlgError, linalg.LinAlgWarning, FloatingPointError, ValueError):
            if p == 0 or q == 0:
                raise BorelError("degenerate Pade system at every lower order")
            p, q = p - 1, q - 1


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------


def _weight(r: np.ndarray, beta: float, kind: str) -> np.ndarray:
    if kind == "bis":
        return (1.0 + beta**2 * r**2) * np.exp(-beta * r)
    return np.exp(-beta * r)


def _norm_samples(params: WeightedNormParams, cutoff: float, refine: int) -> np.ndarray:
    d = params.direction
    nr = params.n_radial * refine
    r_ray = np.concatenate([[0.0], np.geomspace(1e-6, cutoff, nr)])
    angs = d.theta + np.linspace(-d.delta / 2, d.delta / 2, params.n_angular * refine)
    # open sector: pull the edges in by a hair
    angs = d.theta + (angs - d.theta) * (1 - 1e-9)
    ray = (r_ray[:, None] * np.exp(1j * angs)[None, :]).ravel()
    r_disc = np.linspace(0.0, d.rho * (1 - 1e-9), 24 * refine)
    phi = np.linspace(-np.pi, np.pi, params.n_disc_angular * refine, endpoint=False)
    disc = (r_disc[:, None] * np.exp(1j * phi)[None, :]).ravel()
    return np.concatenate([ray, disc])


def weighted_norm(
    f: UniSeries | Sequence[complex] | None,
    params: WeightedNormParams,
    kind: Literal["plain", "bis"] = "bis",
    continuation: Literal["pade", "polynomial"] | Callable = "pade",
) -> NormResult:
    """Grid sup of ``|B(f)(t)| w(t)`` over the sampled ``Delta_{theta,delta,rho}``.

    ``kind="plain"`` uses ``B`` and weight ``exp(-beta|t|)``; ``kind="bis"``
    uses ``Bt`` and weight ``(1 + beta^2|t|^2) exp(-beta|t|)``.
    ``continuation`` selects the function evaluated in the Borel plane:
    the Pade approximant, the truncated polynomial itself, or any callable.
    The grid sup is a lower bound of the true sup; ``refinement_change``
    reports the relative change under a twofold refinement.
    """
    beta = params.beta
    if callable(continuation):
        G = continuation
    else:
        bs = borel(f, "B_bis" if kind == "bis" else "B")
        if not np.any(bs.coeffs):
            return NormResult(0.0, 0j, 0.0, 0.0)
        if continuation == "polynomial":
            G = bs
        elif continuation == "pade":
            pade = pade_continue(bs)
            poles = pade.poles
            if len(poles) and np.any(params.direction.contains(poles)):
                raise ContinuationFailure(
                    f"Pade pole inside the domain at {poles[params.direction.contains(poles)][0]:.6g}"
                )
            G = pade
        else:
            raise ValueError(f"unknown continuation {continuation!r}")
    # cutoff: weight * |G| must fall below tail_rel of the running max
    cutoff = max(10.0 / beta, 2 * params.direction.rho)
    for _ in range(60):
        probe = cutoff * np.exp(1j * params.direction.theta)
        r_in = np.geomspace(1e-3, cutoff, 64)
        vals = np.abs(G(r_in * np.exp(1j * params.direction.theta))) * _weight(r_in, beta, kind)
        tail = abs(G(probe)) * _weight(np.array(cutoff), beta, kind)
        if tail < params.tail_rel * max(vals.max(), 1e-300):
            break
        cutoff *= 1.5
    best = []
    for refine in (1, 2):
        t = _norm_samples(params, cutoff, refine)
        w = np.abs(G(t)) * _weight(np.abs(t), beta, kind)
        i = int(np.nanargmax(w))
        best.append((float(w[i]), complex(t[i])))
    change = abs(best[1][0] - best[0][0]) / max(best[1][0], 1e-300)
    return NormResult(best[1][0], best[1][1], change, cutoff)


def fact_inequality_margin(beta: float, t: float) -> float:
    """``(C/beta) F(t) - int_0^t F`` with ``F(u) = e^{beta u}/(1 + beta^2 u^2)``."""
    F = lambda u: math.exp(beta * u) / (1.0 + beta**2 * u**2)  # noqa: E731
    lhs, _ = integrate.quad(F, 0.0, t, epsabs=1e-13, epsrel=1e-12, limit=200)
    return FACT_CONSTANT / beta * F(t) - lhs


def irregular_norm_bound(beta: float, k: complex, alpha: complex, direction: Direction) -> float:
    """``beta / (beta d_k - C |alpha k|)``, or ``inf`` when the hypothesis fails."""
    dk = direction.distance_to(-k)
    den = beta * dk - FACT_CONSTANT * abs(alpha * k)
    return beta / den if den > 0 else math.inf


# ---------------------------------------------------------------------------
# Laplace transform
# ---------------------------------------------------------------------------


def _ray_distance(z: np.ndarray, theta: float) -> np.ndarray:
    w = z * np.exp(-1j * theta)
    return np.where(w.real <= 0, np.abs(w), np.abs(w.imag))


def laplace_sum(
    g: BorelSeries | PadeApproximant | Callable,
    theta: float,
    x: complex,
    constant_term: complex | None = None,
    growth: float = 0.0,
    tol: float = TOL_QUAD,
    max_panels: int = 1 << 14,
) -> complex:
    """``int_{e^{i theta} R_+} g(t) exp(-t/x) dt + f_0``.

    A :class:`BorelSeries` without continuation is Pade-continued at the
    default order.  ``growth`` is an exponential-type bound of ``g`` along
    the ray; the integral requires ``Re(e^{i theta}/x) > growth``.
    """
    if isinstance(g, BorelSeries):
        c0 = g.constant if constant_term is None else constant_term
        cont = g.pade if g.pade is not None else pade_continue(g)
    else:
        c0 = 0j if constant_term is None else constant_term
        cont = g
    if isinstance(cont, PadeApproximant):
        if cont.pole_report()["accumulating_at_origin"]:
            raise DirectionBlocked("continuation poles accumulate at the origin")
        poles = cont.poles
        if len(poles):
            d = _ray_distance(poles, theta)
            if np.any(d < EPS_POLE):
                z = poles[np.argmin(d)]
                raise DirectionBlocked(f"pole {z:.6g} lies on the ray of direction {theta:.6g}")
    u = np.exp(1j * theta)
    decay = (u / x).real
    if decay <= growth:
        raise DivergentIntegral(
            f"Re(e^(i theta)/x) = {decay:.6g} does not exceed the growth bound {growth:.6g}"
        )

    def integrand(s):
        t = s * u
        return cont(t) * np.exp(-t / x) * u

    # cutoff from the exponential tail: |g| e^{-decay s}/decay below tol
    T = 30.0 / decay
    for _ in range(80):
        tail = abs(cont(T * u)) * math.exp(-(decay - growth) * T) / (decay - growth)
        if tail < 0.1 * tol:
            break
        T *= 1.5
    nodes, weights = np.polynomial.legendre.leggauss(20)
    prev = None
    panels = 8
    while panels <= max_panels:
        edges = np.linspace(0.0, T, panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        s = 0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)
        val = np.sum(integrand(s) * weights[None, :] * 0.5 * (b - a))
        if prev is not None and abs(val - prev) < tol * max(1.0, abs(val)):
            return complex(val + c0)
        prev = val
        panels *= 2
    raise DivergentIntegral("Laplace quadrature did not converge within the panel budget")


def borel_pade_laplace(
    f: UniSeries | Sequence[complex],
    theta: float,
    x: complex,
    order: tuple[int, int] | None = None,
) -> tuple[complex, dict]:
    """1-sum of ``f`` in direction ``theta`` through a Pade continuation."""
    bs = borel(f, "B_bis")
    pade = pade_continue(bs, order)
    value = laplace_sum(BorelSeries(bs.coeffs, "B_bis", bs.constant, pade), theta, x)
    return value, pade.pole_report()


# ---------------------------------------------------------------------------
# singular scalar ODEs
# ---------------------------------------------------------------------------


def solve_irregular_ode(b: UniSeries | Sequence[complex], k: complex, alpha: complex = 0.0) -> UniSeries:
    """Formal solution of ``x^2 a' + (1 + alpha x) k a = b``.

    Coefficients follow ``a_0 = b_0/k`` and
    ``a_m = (b_m - (m - 1 + alpha k) a_{m-1}) / k``.
    """
    if k == 0:
        raise SingularOperator("k must be nonzero")
    bc = _coeffs(b)
    a = np.zeros(len(bc), dtype=complex)
    if len(bc):
        a[0] = bc[0] / k
    for m in range(1, len(bc)):
        a[m] = (bc[m] - (m - 1 + alpha * k) * a[m - 1]) / k
    return UniSeries(a)


def irregular_ode_residual(a: UniSeries, k: complex, alpha: complex = 0.0) -> UniSeries:
    """``x^2 a' + (1 + alpha x) k a`` truncated to the order of ``a``."""
    x = UniSeries.monomial(1, a.order)
    return (a.deriv() * x * x) + (1 + alpha * x) * k * a


def irregular_borel_closed_form(
    bt_b: Callable, k: complex, alpha: complex = 0.0, n_nodes: int = 96
) -> Callable:
    """``t -> Bt(a)(t)`` for the irregular ODE with ``b_0 = 0``.

    ``Bt(a) = Bt(b)/(t+k) - alpha k (t+k)^{-1-alpha k} int_0^t Bt(b)(s)(s+k)^{alpha k - 1} ds``
    with the integral taken along the segment ``[0, t]``.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    ak = alpha * k

    def G(t):
        t = np.asarray(t, dtype=complex)
        first = bt_b(t) / (t + k)
        if ak == 0:
            return first
        s = t[..., None] * u
        integral = t * np.sum(bt_b(s) * (s + k) ** (ak - 1) * w, axis=-1)
        return first - ak * (t + k) ** (-1 - ak) * integral

    return G


def solve_regular_ode(b: UniSeries | Sequence[complex], k: complex) -> UniSeries:
    """Formal solution of ``x a' + k a = b``: ``a_j = b_j/(j + k)``."""
    bc = _coeffs(b)
    j = np.arange(len(bc))
    den = j + k
    bad = np.abs(den) < 1e-14
    if np.any(bad & (bc != 0)) or np.any(bad):
        raise ResonanceError(f"j + k = 0 at j = {int(j[bad][0])}")
    return UniSeries(bc / den)


# ---------------------------------------------------------------------------
# Gevrey diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GevreyReport:
    classification: Literal["convergent", "gevrey-1"]
    A: float
    C: float
    ratio_slope: float
    normalized_ratios: np.ndarray


def gevrey_estimate(f: UniSeries | Sequence[complex], min_terms: int = 8) -> GevreyReport:
    """Fit ``|f_k| <= A C^k k!`` and classify the growth.

    The classification regresses ``log|f_{k+1}/f_k|`` on ``log(k+1)``: a
    slope near 1 means factorial growth (Gevrey-1), near 0 a geometric
    (convergent) one.  The threshold is 1/2.
    """
    c = _coeffs(f)
    nz = np.nonzero(np.abs(c) > 0)[0]
    if len(nz) == 0:
        return GevreyReport("convergent", 0.0, 0.0, 0.0, np.zeros(0))
    if len(nz) < min_terms:
        raise InsufficientData(f"need {min_terms} nonzero coefficients, have {len(nz)}")
    k = nz.astype(float)
    logs = np.log(np.abs(c[nz])) - special.gammaln(k + 1)
    slope, intercept = np.polyfit(k, logs, 1)
    A = float(np.exp(intercept))
    C = float(np.exp(slope))
    # consecutive nonzero pairs only
    pairs = [(i, j) for i, j in zip(nz[:-1], nz[1:]) if j == i + 1]
    if len(pairs) >= 3:
        ii = np.array([p[0] for p in pairs])
        r = np.abs(c[ii + 1] / c[ii])
        ratio_slope = float(np.polyfit(np.log(ii + 1.0), np.log(r), 1)[0])
        norm_r = r / (ii + 1.0)
    else:
        gaps = np.diff(k)
        r = np.abs(c[nz[1:]] / c[nz[:-1]]) ** (1.0 / gaps)
        ratio_slope = float(np.polyfit(np.log(k[1:]), np.log(r), 1)[0])
        norm_r = r / k[1:]
    cls = "gevrey-1" if ratio_slope > 0.5 else "convergent"
    return GevreyReport(cls, A, C, ratio_slope, norm_r)
