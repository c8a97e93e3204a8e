"""
Sectorial normalization by integration along asymptotic paths.

Everything is done after the rotation ``x -> x / lam`` and division of the
field by ``lam``, which brings the eigenvalue to 1 and leaves ``a1``, ``a2``
unchanged.  A prepared field is written

    Z = x^2 dx + y1 (-(1 + C) + a1 x + R) d1 + y2 (1 + C + a2 x + R) d2

with ``C = D / lam`` and ``R = O(x)``.  The Cauchy problem integrated in
real time ``t >= 0`` is ``X = sign * i / (1 + b x + C) * Z`` with
``b = (a2 - a1) / 2``; its trajectories go to the origin inside the sector
bisected by ``sign * i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .formal_normalization import _flow_pushforward, _prepared_vector_field, solve_homological
from .series_core import MultiSeries, lie_derivative, monomial_table

__all__ = [
    "GeometryError",
    "StabilityViolation",
    "StiffnessError",
    "BudgetError",
    "ShrinkDomain",
    "SectorGeometry",
    "SectorialField",
    "Membership",
    "Trajectory",
    "PathIntegral",
    "SectorialMap",
    "FlatnessReport",
    "domain_membership",
    "perturbation_margin",
    "rotate_series",
    "formal_homological",
    "check_smallness",
    "integrate_flow",
    "critical_time_bound",
    "decay_bound_violation",
    "homological_path_integral",
    "build_sectorial_maps",
    "transition_flatness",
    "fit_flatness",
    "lie_residual",
    "model_solution",
    "sample_omega",
]

RTOL_FLOW = 1e-10
ATOL_FLOW = 1e-14
TOL_PATH = 1e-9
DOMAIN_SLACK = 1e-9
SMALLNESS = 1.25
FD_STEP = 1e-5
FORMAL_EXTRA = 12


class GeometryError(ValueError):
    """Sector parameters violate an admissibility inequality."""


class StabilityViolation(RuntimeError):
    """A trajectory started in the stable domain left it."""

    def __init__(self, message: str, state: np.ndarray, t: float):
        super().__init__(message)
        self.state = state
        self.t = t


class StiffnessError(RuntimeError):
    """The integrator could not advance."""


class BudgetError(RuntimeError):
    """The path-integral tail could not be brought below tolerance."""


class ShrinkDomain(RuntimeError):
    """The injectivity criterion failed on samples; retry with ``suggested_r``."""

    def __init__(self, message: str, suggested_r: float):
        super().__init__(message)
        self.suggested_r = suggested_r


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class _PolyEval:
    """Fast pointwise evaluation of several series sharing the orders."""

    def __init__(self, *series: MultiSeries):
        s0 = series[0]
        self.K, self.D = s0.K, s0.D
        tab = monomial_table(self.D)
        self.n1 = tab.mono[:, 0]
        self.n2 = tab.mono[:, 1]
        self.mx = np.arange(self.K)
        self.tables = [s.table for s in series]

    def __call__(self, x: complex, y1: complex, y2: complex) -> list[complex]:
        xp = x ** self.mx
        ym = (y1 ** self.n1) * (y2 ** self.n2)
        return [complex(xp @ t @ ym) for t in self.tables]


@dataclass
class SectorialField:
    """Prepared field in rotated coordinates (eigenvalue 1).

    Attributes
    ----------
    a1, a2 : complex
        Formal invariants.
    C, R : MultiSeries
        Tangential and radial coefficients (``R`` vanishes at ``x = 0``).
    lam : complex
        Original eigenvalue, used to map points back and forth.
    """

    a1: complex
    a2: complex
    C: MultiSeries
    R: MultiSeries
    lam: complex = 1.0
    _eval: _PolyEval | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.R.table[0].any():
            raise ValueError("R must vanish at x = 0")
        self._eval = _PolyEval(self.C, self.R)

    @classmethod
    def from_prepared(cls, lam: complex, a1: complex, a2: complex, D: MultiSeries, R: MultiSeries) -> "SectorialField":
        """Rotate ``(D, R)`` of a field with eigenvalue ``lam``."""
        return cls(complex(a1), complex(a2), rotate_series(D, lam, -1), rotate_series(R, lam, -1), complex(lam))

    @classmethod
    def model(cls, a1: complex, a2: complex, K: int = 4, D: int = 2) -> "SectorialField":
        """``C = R = 0``."""
        z = MultiSeries.zeros(K, D)
        return cls(complex(a1), complex(a2), z, z)

    @property
    def a(self) -> complex:
        return self.a1 + self.a2

    @property
    def b(self) -> complex:
        return 0.5 * (self.a2 - self.a1)

    @property
    def K(self) -> int:
        return self.C.K

    @property
    def D(self) -> int:
        return self.C.D

    def coefficients(self, x: complex, y1: complex, y2: complex) -> tuple[complex, complex]:
        """``(C, R)`` at a point."""
        c, r = self._eval(x, y1, y2)
        return c, r

    def vector_field(self) -> tuple[MultiSeries, MultiSeries, MultiSeries]:
        """Components of ``Z`` as series."""
        fld = _prepared_vector_field(1.0, self.a1, self.a2, self.C, self.R)
        return fld.comp_x, fld.comp_y1, fld.comp_y2

    def Z(self, x: complex, y1: complex, y2: complex) -> np.ndarray:
        c, r = self.coefficients(x, y1, y2)
        return np.array(
            [x * x, y1 * (-(1 + c) + self.a1 * x + r), y2 * (1 + c + self.a2 * x + r)], dtype=complex
        )

    def to_rotated(self, x):
        return np.asarray(x, dtype=complex) / self.lam

    def from_rotated(self, x):
        return np.asarray(x, dtype=complex) * self.lam


def rotate_series(S: MultiSeries, lam: complex, power: int) -> MultiSeries:
    """``lam^power S(lam x, y)`` coefficientwise."""
    return S.scale_monomials(lambda m, n1, n2: lam ** (m + power) + 0 * n1)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Membership:
    in_sigma: bool
    in_theta_plus: bool
    in_theta_minus: bool
    in_omega: bool


@dataclass(frozen=True)
class SectorGeometry:
    """Sector parameters in rotated coordinates.

    ``S(r, eps)`` is bisected by ``sign * i`` with opening ``pi + 2 eps``;
    ``Sigma = {sign Im x > omega |x|}``; ``Theta_pm = {pm Re x > mu |x|}``.
    """

    r: float
    epsilon: float
    omega: float
    omega_prime: float
    mu: float
    delta: float
    delta_prime: float
    a: complex
    sign: int = 1
    r1: float | None = None
    r2: float | None = None

    @property
    def ry(self) -> tuple[float, float]:
        return (self.r1 if self.r1 is not None else self.r, self.r2 if self.r2 is not None else self.r)

    @property
    def kappa(self) -> float:
        return (1 + self.delta) / (self.mu - self.delta)

    @property
    def kappa_y(self) -> float:
        return (abs(self.a / 2) + self.delta_prime) / (self.mu - self.delta)

    @property
    def r_prime(self) -> float:
        return self.r * math.exp(-self.kappa * (self.epsilon + math.asin(self.omega)))

    @property
    def ry_prime(self) -> tuple[float, float]:
        f = math.exp(-self.kappa_y * (self.epsilon + math.asin(self.omega)))
        return self.ry[0] * f, self.ry[1] * f

    def violations(self) -> list[str]:
        """Admissibility inequalities that fail."""
        out = []
        a = self.a
        if a.real <= 0:
            out.append("Re(a) must be positive")
            return out
        wp_max = a.real / abs(a)
        if not 0 < self.omega_prime < wp_max:
            out.append(f"omega' must lie in (0, {wp_max:.6g})")
            return out
        lo = math.cos(math.acos(self.omega_prime) - abs(np.angle(a)))
        if not lo < self.omega < 1:
            out.append(f"omega must lie in ({lo:.6g}, 1)")
        if not 0 < self.mu < math.sqrt(max(0.0, 1 - self.omega**2)):
            out.append("mu must lie in (0, sqrt(1 - omega^2))")
        if not 0 < self.delta < min(self.omega, self.mu):
            out.append("delta must lie in (0, min(omega, mu))")
        if not 0 < self.delta_prime < self.omega_prime:
            out.append("delta' must lie in (0, omega')")
        if not 0 < self.epsilon < min(math.pi / 2, math.acos(self.mu)):
            out.append("epsilon must lie in (0, min(pi/2, arccos(mu)))")
        if self.r <= 0:
            out.append("r must be positive")
        return out

    def validate(self) -> "SectorGeometry":
        bad = self.violations()
        if bad:
            raise GeometryError("; ".join(bad))
        return self

    @classmethod
    def auto(
        cls,
        a: complex,
        sign: int = 1,
        r: float = 0.25,
        epsilon: float | None = None,
        fld: SectorialField | None = None,
        **overrides,
    ) -> "SectorGeometry":
        """Midpoint choices of every parameter, then ``r`` shrunk until the
        perturbation bounds hold on samples of ``fld`` (if given)."""
        a = complex(a)
        if a.real <= 0:
            raise GeometryError("Re(a) must be positive")
        wp = overrides.pop("omega_prime", a.real / (2 * abs(a)))
        lo = math.cos(math.acos(wp) - abs(np.angle(a)))
        om = overrides.pop("omega", 0.5 * (lo + 1))
        mu = overrides.pop("mu", math.sqrt(1 - om**2) / 2)
        de = overrides.pop("delta", min(om, mu) / 2)
        dp = overrides.pop("delta_prime", wp / 2)
        eps = epsilon if epsilon is not None else min(0.25, math.acos(mu) / 2)
        geom = cls(r, eps, om, wp, mu, de, dp, a, sign, **overrides).validate()
        if fld is not None:
            for _ in range(40):
                if perturbation_margin(fld, geom) > 0:
                    break
                geom = geom.with_r(geom.r / 2)
            else:
                raise GeometryError("no admissible radius found")
        return geom

    def with_r(self, r: float) -> "SectorGeometry":
        return SectorGeometry(
            r, self.epsilon, self.omega, self.omega_prime, self.mu, self.delta, self.delta_prime,
            self.a, self.sign, None if self.r1 is None else self.r1 * r / self.r,
            None if self.r2 is None else self.r2 * r / self.r,
        )

    def relative_arg(self, x: complex) -> float:
        """``arg x - sign pi/2`` in ``(-pi, pi]``."""
        return float(np.angle(x * np.exp(-0.5j * math.pi * self.sign)))


def perturbation_margin(fld: SectorialField, geom: SectorGeometry, n: int = 12) -> float:
    """``min(delta - |1/w - 1|, delta' - |(a/2 + R/x)/w - a/2|)`` on samples of
    ``S(r, eps) x D(0, r)`` (``w = 1 + b x + C``)."""
    worst = np.inf
    r1, r2 = geom.ry
    half = math.pi / 2 + geom.epsilon
    for rho in np.linspace(0.2, 1.0, 4) * geom.r * (1 - 1e-9):
        for phi in np.linspace(-half, half, n):
            x = rho * np.exp(1j * (phi + geom.sign * math.pi / 2))
            for s in (0.0, 1.0):
                for th in np.linspace(0, 2 * math.pi, 4, endpoint=False):
                    y1 = s * r1 * np.exp(1j * th)
                    y2 = s * r2 * np.exp(-2j * th)
                    c, rr = fld.coefficients(x, y1, y2)
                    w = 1 + fld.b * x + c
                    m1 = geom.delta - abs(1 / w - 1)
                    m2 = geom.delta_prime - abs((fld.a / 2 + rr / x) / w - fld.a / 2)
                    worst = min(worst, m1, m2)
    return float(worst)


def domain_membership(p: Sequence[complex], geom: SectorGeometry) -> Membership:
    """Evaluate the defining inequalities at ``p = (x, y1, y2)`` (rotated).

    Outside ``Sigma`` the radii shrink exponentially with the angular
    distance to ``Sigma``: ``|x| <= r exp(kappa (arccos(omega) - |rel|))``
    where ``rel = arg x - sign pi/2``, and likewise for ``y`` with
    ``kappa_y``.
    """
    x, y1, y2 = (complex(v) for v in p)
    ax = abs(x)
    in_sigma = 0 < ax < geom.r and geom.sign * x.imag > geom.omega * ax
    in_tp = 0 < ax < geom.r and x.real > geom.mu * ax
    in_tm = 0 < ax < geom.r and x.real < -geom.mu * ax
    r1, r2 = geom.ry
    rel = geom.relative_arg(x) if ax > 0 else 0.0
    ok = 0 < ax < geom.r and abs(rel) < math.pi / 2 + geom.epsilon and abs(y1) < r1 and abs(y2) < r2
    if ok and not geom.sign * x.imag >= geom.omega * ax:
        gap = math.acos(geom.omega) - abs(rel)
        slack = 1 + DOMAIN_SLACK
        ok = (
            ax <= slack * geom.r * math.exp(geom.kappa * gap)
            and abs(y1) <= slack * r1 * math.exp(geom.kappa_y * gap)
            and abs(y2) <= slack * r2 * math.exp(geom.kappa_y * gap)
        )
    return Membership(bool(in_sigma), bool(in_tp), bool(in_tm), bool(ok))


def critical_time_bound(x0: complex, geom: SectorGeometry) -> float:
    """Upper bound on the time a ``Theta``-start needs to enter ``Sigma``."""
    return math.exp(geom.kappa * (geom.epsilon + math.asin(geom.omega))) / ((1 + geom.delta) * abs(x0))


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 3) complex
    flags: list[Membership]
    extras: np.ndarray | None = None  # (n, k) accumulated integrals

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    def sigma_entry(self) -> int | None:
        for i, f in enumerate(self.flags):
            if f.in_sigma:
                return i
        return None


def _rhs_factory(fld: SectorialField, sign: int, integrands: Sequence[Callable] = ()):
    s = sign * 1j
    a1, a2, b = fld.a1, fld.a2, fld.b
    ev = fld._eval

    def rhs(t, u):
        x, y1, y2 = u[0], u[1], u[2]
        c, r = ev(x, y1, y2)
        iota = s / (1 + b * x + c)
        out = np.empty(len(u), dtype=complex)
        out[0] = iota * x * x
        out[1] = iota * y1 * (-(1 + c) + a1 * x + r)
        out[2] = iota * y2 * (1 + c + a2 * x + r)
        for k, F in enumerate(integrands):
            out[3 + k] = iota * F(x, y1, y2, c, r)
        return out

    return rhs


def integrate_flow(
    fld: SectorialField,
    p0: Sequence[complex],
    geom: SectorGeometry,
    t_end: float | None = None,
    x_min: float | None = None,
    check_domain: bool = True,
    integrands: Sequence[Callable] = (),
    rtol: float = RTOL_FLOW,
    atol: float = ATOL_FLOW,
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate ``X = sign i Z / (1 + b x + C)`` from ``p0`` (rotated).

    Stops at ``t_end`` or when ``|x| <= x_min``.  ``integrands`` are
    functions ``F(x, y1, y2, C, R)`` whose integrals ``int iota F dt`` are
    accumulated alongside (``iota = sign i / (1 + b x + C)``).
    """
    p0 = np.asarray(p0, dtype=complex)
    if t_end is None and x_min is None:
        raise ValueError("give t_end or x_min")
    if t_end is None:
        t_end = critical_time_bound(p0[0], geom) + 50.0 / ((geom.omega - geom.delta) * x_min)
    events = []
    if x_min is not None:
        def hit(t, u):
            return abs(u[0]) - x_min

        hit.terminal = True
        hit.direction = -1
        events.append(hit)
    u0 = np.concatenate([p0, np.zeros(len(integrands), dtype=complex)])
    sol = solve_ivp(
        _rhs_factory(fld, geom.sign, integrands),
        (0.0, t_end),
        u0,
        method="DOP853",
        rtol=rtol,
        atol=atol,
        events=events or None,
        max_step=max_step,
    )
    if sol.status == -1:
        raise StiffnessError(sol.message)
    states = sol.y[:3].T.copy()
    flags = [domain_membership(s, geom) for s in states]
    if check_domain:
        for i, f in enumerate(flags):
            if not f.in_omega:
                raise StabilityViolation(f"left the stable domain at t = {sol.t[i]:.6g}", states[i], float(sol.t[i]))
    extras = sol.y[3:].T.copy() if integrands else None
    return Trajectory(sol.t.copy(), states, flags, extras)


def decay_bound_violation(traj: Trajectory, geom: SectorGeometry) -> float:
    """Largest relative violation of the two-sided ``|x(t)|`` bounds.

    Lower bound ``|x0| / (1 + (1 + delta)|x0| t)`` everywhere; upper bound
    ``|x_s| / (1 + (omega - delta)|x_s| (t - t_s))`` after ``Sigma``-entry at
    ``(t_s, x_s)``.  Non-positive means both hold.
    """
    ax = np.abs(traj.x)
    t = traj.times
    lower = ax[0] / (1 + (1 + geom.delta) * ax[0] * t)
    worst = float(np.max((lower - ax) / lower))
    i = traj.sigma_entry()
    if i is not None:
        ts, xs = t[i], ax[i]
        upper = xs / (1 + (geom.omega - geom.delta) * xs * (t[i:] - ts))
        worst = max(worst, float(np.max((ax[i:] - upper) / upper)))
    return worst


# ---------------------------------------------------------------------------
# homological equation
# ---------------------------------------------------------------------------


@dataclass
class PathIntegral:
    value: complex
    t_end: float
    x_end: complex
    tail: complex
    tail_error: float
    n_steps: int


def _series_fn(S: MultiSeries) -> Callable:
    ev = _PolyEval(S)
    return lambda x, y1, y2: ev(x, y1, y2)[0]


def formal_homological(fld: SectorialField, A: MultiSeries, M: int, extra: int = FORMAL_EXTRA) -> MultiSeries:
    """Formal solution of ``L_Z alpha = x^(M+1) A`` in rotated coordinates.

    The field and ``A`` are polynomials, so the solution is computed
    ``extra`` orders beyond ``K``; it serves as the path-integral tail.
    """
    Kf, Dg = fld.K + extra, fld.D
    return solve_homological(
        1.0, fld.a1, fld.a2, fld.C.with_orders(Kf, Dg), fld.R.with_orders(Kf, Dg), A.with_orders(Kf, Dg), M
    )


def homological_path_integral(
    A: MultiSeries | Callable,
    M: int,
    fld: SectorialField,
    p0: Sequence[complex],
    geom: SectorGeometry,
    formal: MultiSeries | None = None,
    x_stop: float | None = None,
    tol: float = TOL_PATH,
    rel_tol: float = 1e-10,
    check_domain: bool = True,
    rtol: float = 1e-12,
    max_halvings: int = 10,
) -> PathIntegral:
    """``alpha(p0) = -int_gamma x^(M+1) A dx / x^2`` along the asymptotic path.

    In time this is ``-int_0^inf iota x^(M+1) A dt``.  The path is followed
    until ``|x| <= x_stop``; the remainder ``alpha(p(T))`` is taken from the
    formal solution (a series ``formal``, computed when ``A`` is a series),
    shrinking ``x_stop`` until the last two formal ``x``-slabs at ``p(T)``
    are below ``min(tol, rel_tol |alpha(p0)|)``.  Without a formal solution the analytic bound
    ``C' int_T^inf (1 + (omega - delta)|x_s| t)^-(M+1) dt`` is used.
    """
    p0 = np.asarray(p0, dtype=complex)
    Af = _series_fn(A) if isinstance(A, MultiSeries) else A
    if formal is None and isinstance(A, MultiSeries):
        formal = formal_homological(fld, A, M)
    mp1 = M + 1

    def F(x, y1, y2, c, r):
        return x**mp1 * Af(x, y1, y2)

    x_stop = x_stop if x_stop is not None else 0.5 * abs(p0[0])
    if formal is not None:
        last = formal.x_part(formal.K - 2)
        fev = _PolyEval(formal, last)
        state = p0
        acc = 0j
        t_tot = 0.0
        steps = 0
        for _ in range(max_halvings + 1):
            tr = integrate_flow(fld, state, geom, x_min=x_stop, check_domain=check_domain, integrands=[F], rtol=rtol, atol=1e-18)
            acc += tr.extras[-1, 0]
            t_tot += tr.times[-1]
            steps += len(tr.times)
            state = tr.states[-1]
            tail, err = fev(*state)
            if abs(err) <= min(tol, rel_tol * abs(tail - acc)):
                return PathIntegral(-acc + tail, t_tot, state[0], tail, abs(err), steps)
            x_stop /= 2
        raise BudgetError(f"formal tail error {abs(err):.3e} above {tol:.1e}")
    # analytic tail bound
    c = geom.omega - geom.delta
    tr = integrate_flow(fld, p0, geom, x_min=x_stop, check_domain=check_domain, integrands=[F], rtol=rtol, atol=1e-18)
    i = tr.sigma_entry()
    if i is None:
        raise BudgetError("trajectory never entered Sigma")
    xs, ts = abs(tr.x[i]), tr.times[i]
    tt = tr.times[i:] - ts
    vals = np.array([abs(F(*s, 0, 0)) for s in tr.states[i:]])
    k0 = len(tt) - max(2, len(tt) // 10)
    Cp = float(np.max(vals[k0:] * (1 + c * xs * tt[k0:]) ** mp1))
    T = tt[-1]
    bound = Cp * (1 + c * xs * T) ** (-M) / (c * xs * M) if M > 0 else np.inf
    if bound > tol:
        raise BudgetError(f"analytic tail bound {bound:.3e} above {tol:.1e}")
    return PathIntegral(-tr.extras[-1, 0], float(tr.times[-1]), tr.x[-1], 0j, bound, len(tr.times))


def lie_residual(
    alpha: Callable[[complex, complex, complex], complex],
    fld: SectorialField,
    p: Sequence[complex],
    target: complex,
    h: float = FD_STEP,
) -> float:
    """``|L_Z alpha(p) - target| / |target|`` with central differences."""
    p = np.asarray(p, dtype=complex)
    Zp = fld.Z(*p)
    lz = 0j
    for k in range(3):
        hk = h * max(abs(p[k]), 1e-3)
        e = np.zeros(3, dtype=complex)
        e[k] = hk
        lz += Zp[k] * (alpha(*(p + e)) - alpha(*(p - e))) / (2 * hk)
    return abs(lz - target) / max(abs(target), 1e-300)


# ---------------------------------------------------------------------------
# sectorial maps
# ---------------------------------------------------------------------------


@dataclass
class SectorialMap:
    """Sectorial normalizing map ``Psi = psi o phi`` on one sector.

    ``phi = (y1 e^rho, y2 e^rho)`` removes ``R`` (``L_Z rho = -R``);
    ``psi = (y1 e^-chi, y2 e^chi)`` removes ``C - d(v)`` of the field
    ``phi_* Z``.  Points are given in original coordinates.
    """

    fld: SectorialField
    geom: SectorGeometry
    N: int
    rho_formal: MultiSeries
    chi_formal: MultiSeries
    d: MultiSeries
    kind: str = "composed"
    check_domain: bool = True
    x_stop_factor: float = 0.5

    def times(self, x: complex, y1: complex, y2: complex) -> tuple[complex, complex]:
        """``(rho(p), chi(phi(p)))`` at an original-coordinate point."""
        xr = complex(self.fld.to_rotated(x))
        return _times(self, np.array([xr, y1, y2], dtype=complex))

    def __call__(self, x: complex, y1: complex, y2: complex) -> tuple[complex, complex, complex]:
        rho, chi = self.times(x, y1, y2)
        if self.kind == "radial":
            chi = 0j
        return x, y1 * np.exp(rho - chi), y2 * np.exp(rho + chi)

    def radial_time(self, x: complex, y1: complex, y2: complex) -> complex:
        xr = complex(self.fld.to_rotated(x))
        return _rho_only(self, np.array([xr, y1, y2], dtype=complex)).value

    def normal_form(self, x: complex, y1: complex, y2: complex) -> np.ndarray:
        """The target field (original coordinates, un-rotated) at a point."""
        lam = self.fld.lam
        dv = complex(_series_fn(self.d)(0, y1, y2)) * lam
        return np.array(
            [x * x, y1 * (-lam + self.fld.a1 * x - dv), y2 * (lam + self.fld.a2 * x + dv)], dtype=complex
        )

    def smallness(self, samples: Sequence[Sequence[complex]]) -> float:
        """``exp(2 sup |f|)`` over the flow times at ``samples``."""
        worst = 0.0
        for p in samples:
            rho, chi = self.times(*p)
            worst = max(worst, abs(rho), abs(chi))
        return math.exp(2 * worst)


def _rho_only(smap: SectorialMap, p: np.ndarray) -> PathIntegral:
    fld = smap.fld
    negR = -fld.R
    return homological_path_integral(
        _mul_x_fn(negR, -(smap.N + 2)),
        smap.N + 1,
        fld,
        p,
        smap.geom,
        formal=smap.rho_formal,
        x_stop=smap.x_stop_factor * abs(p[0]),
        check_domain=smap.check_domain,
    )


def _mul_x_fn(S: MultiSeries, k: int) -> Callable:
    """``x^k S`` pointwise (``k`` may be negative)."""
    ev = _series_fn(S)
    return lambda x, y1, y2: x**k * ev(x, y1, y2)


def _times(smap: SectorialMap, p: np.ndarray) -> tuple[complex, complex]:
    """Both flow times from one base point.

    ``rho(p)`` comes first; then along the same trajectory ``q(t)``
    ``chi(phi(p)) = -int iota (d(v e^(2 rho(q))) - C(q)) dt`` plus the
    formal tail, with ``rho(q(t)) = rho(p) - int_0^t iota R dt``.
    """
    fld, geom = smap.fld, smap.geom
    first = _rho_only(smap, p)
    rho0 = first.value
    if smap.kind == "radial":
        return rho0, 0j
    dfn = _series_fn(smap.d)
    x_stop = abs(first.x_end)

    def rhs(t, u):
        x, y1, y2, rho = u[0], u[1], u[2], u[3]
        c, r = fld.coefficients(x, y1, y2)
        iota = geom.sign * 1j / (1 + fld.b * x + c)
        e = np.exp(rho)
        out = np.empty(5, dtype=complex)
        out[0] = iota * x * x
        out[1] = iota * y1 * (-(1 + c) + fld.a1 * x + r)
        out[2] = iota * y2 * (1 + c + fld.a2 * x + r)
        out[3] = -iota * r
        out[4] = -iota * (dfn(0, y1 * e, y2 * e) - c)
        return out

    def hit(t, u):
        return abs(u[0]) - x_stop

    hit.terminal = True
    hit.direction = -1
    t_end = first.t_end * 10 + 1.0
    sol = solve_ivp(
        rhs, (0.0, t_end), np.array([*p, rho0, 0j]), method="DOP853",
        rtol=1e-12, atol=1e-18, events=[hit],
    )
    if sol.status == -1:
        raise StiffnessError(sol.message)
    q = sol.y[:, -1]
    rho_end = q[3]
    z = (q[0], q[1] * np.exp(rho_end), q[2] * np.exp(rho_end))
    tail = _series_fn(smap.chi_formal)(*z)
    return rho0, q[4] + tail


def build_sectorial_maps(
    fld: SectorialField,
    N: int,
    geom: SectorGeometry | None = None,
    check_domain: bool = True,
    extra: int = FORMAL_EXTRA,
) -> tuple[SectorialMap, SectorialMap, SectorialMap]:
    """Radial, tangential and composed sectorial maps of a prepared field.

    ``fld`` must be prepared at order ``N + 2``: ``R = O(x^(N+2))`` and
    ``C - d(v) = O(x^(N+2))``.  The formal flow times are
    ``L_Z rho = -R`` (order ``M = N + 1``) and, for ``phi_* Z``,
    ``L chi = -(C o phi^-1 - d)`` (order ``M = N``).  Both are computed
    ``extra`` orders beyond ``K`` for use as path-integral tails.
    """
    if geom is None:
        geom = SectorGeometry.auto(fld.a, fld=fld)
    K, Dg = fld.K, fld.D
    if fld.R.x_valuation() is not None and fld.R.x_valuation() < N + 2:
        raise ValueError(f"R is not O(x^{N + 2})")
    d = MultiSeries.from_v_series(fld.C.v_coeff(0), K, Dg)
    if (fld.C - d).x_valuation() is not None and (fld.C - d).x_valuation() < N + 2:
        raise ValueError(f"C - d(v) is not O(x^{N + 2})")
    Kf = K + extra
    Cf, Rf = fld.C.with_orders(Kf, Dg), fld.R.with_orders(Kf, Dg)
    rho = solve_homological(1.0, fld.a1, fld.a2, Cf, Rf, (-Rf).mul_x(-(N + 2)), N + 1)
    # formal phi_* Z, then chi
    Zf = _prepared_vector_field(1.0, fld.a1, fld.a2, Cf, Rf)
    LY = lie_derivative(Zf, rho)
    C2, R2 = _flow_pushforward(rho, (1, 1), Cf, Rf, LY)
    rhs = -(C2 - d.with_orders(Kf, Dg))
    v = rhs.x_valuation()
    if v is not None and v < N + 1:
        rhs = rhs.x_part(N + 1)
    chi = solve_homological(1.0, fld.a1, fld.a2, C2, R2, rhs.mul_x(-(N + 1)), N)
    common = dict(fld=fld, geom=geom, N=N, rho_formal=rho, chi_formal=chi, d=d, check_domain=check_domain)
    return (
        SectorialMap(kind="radial", **common),
        SectorialMap(kind="tangential", **common),
        SectorialMap(kind="composed", **common),
    )


def check_smallness(smap: SectorialMap, samples: Sequence[Sequence[complex]]) -> float:
    """Injectivity criterion ``exp(2 sup|f|) <= 5/4``; raises ``ShrinkDomain``."""
    val = smap.smallness(samples)
    if val > SMALLNESS:
        raise ShrinkDomain(f"exp(2 sup|f|) = {val:.4f} exceeds 5/4", smap.geom.r / 2)
    return val


# ---------------------------------------------------------------------------
# transition maps
# ---------------------------------------------------------------------------


@dataclass
class FlatnessReport:
    A: float
    B: float
    conclusive: bool
    radii: np.ndarray
    differences: np.ndarray
    note: str = ""


def fit_flatness(radii: np.ndarray, diffs: np.ndarray, floor: float = 1e-13) -> FlatnessReport:
    """Least-squares fit of ``log diff = log A - B / |x|`` above ``floor``."""
    radii = np.asarray(radii, dtype=float)
    diffs = np.asarray(diffs, dtype=float)
    keep = diffs > floor
    if keep.sum() < 3:
        return FlatnessReport(np.nan, np.nan, False, radii, diffs, "differences at noise floor")
    X = np.column_stack([np.ones(keep.sum()), -1.0 / radii[keep]])
    coef, *_ = np.linalg.lstsq(X, np.log(diffs[keep]), rcond=None)
    return FlatnessReport(float(np.exp(coef[0])), float(coef[1]), True, radii, diffs)


def transition_flatness(
    psi_plus: SectorialMap,
    psi_minus: SectorialMap,
    samples: Sequence[Sequence[complex]],
    floor: float = 1e-13,
) -> FlatnessReport:
    """Fit ``|Psi_+ - Psi_-| <= A exp(-B/|x|)`` on overlap samples.

    ``Psi_+ o Psi_-^-1 - Id`` and ``Psi_+ - Psi_-`` differ by a bounded
    factor near the origin, so the pointwise difference is fitted.
    """
    radii, diffs = [], []
    for p in samples:
        a = np.array(psi_plus(*p)[1:])
        b = np.array(psi_minus(*p)[1:])
        radii.append(abs(p[0]))
        diffs.append(float(np.max(np.abs(a - b))))
    return fit_flatness(np.array(radii), np.array(diffs), floor)


def model_solution(a1: complex, a2: complex, p0: Sequence[complex], t: np.ndarray, sign: int = 1) -> np.ndarray:
    """Closed-form flow of the model field (``C = R = 0``, ``a1 = a2``).

    ``x = x0 / (1 - s i x0 t)``, ``y1 = y10 e^(-s i t) (1 - s i x0 t)^(-a1)``,
    ``y2 = y20 e^(s i t) (1 - s i x0 t)^(-a2)`` with ``s = sign``.
    """
    x0, y10, y20 = (complex(v) for v in p0)
    t = np.asarray(t, dtype=float)
    w = 1 - sign * 1j * x0 * t
    return np.column_stack(
        [x0 / w, y10 * np.exp(-sign * 1j * t) * w ** (-a1), y20 * np.exp(sign * 1j * t) * w ** (-a2)]
    )


def sample_omega(
    geom: SectorGeometry,
    rng: np.random.Generator,
    n: int,
    x_floor: float = 0.0,
    theta_only: bool = False,
    max_tries: int = 100000,
) -> list[np.ndarray]:
    """Rejection samples of the stable domain (rotated coordinates).

    ``x_floor`` excludes starts closer to the origin than that (their
    integration time grows like ``1/|x0|``); ``theta_only`` keeps starts in
    ``Theta_+ U Theta_-``.
    """
    out: list[np.ndarray] = []
    r1, r2 = geom.ry
    half = math.pi / 2 + geom.epsilon
    for _ in range(max_tries):
        if len(out) == n:
            return out
        rel = rng.uniform(-half, half)
        gap = math.acos(geom.omega) - abs(rel)
        fx = min(1.0, math.exp(geom.kappa * gap))
        fy = min(1.0, math.exp(geom.kappa_y * gap))
        rmax = geom.r * fx * (1 - 1e-9)
        if rmax <= x_floor:
            continue
        x = rng.uniform(x_floor, rmax) * np.exp(1j * (rel + geom.sign * math.pi / 2))
        y1 = r1 * fy * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        y2 = r2 * fy * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        p = np.array([x, y1, y2], dtype=complex)
        m = domain_membership(p, geom)
        if m.in_omega and (not theta_only or m.in_theta_plus or m.in_theta_minus):
            out.append(p)
    raise RuntimeError(f"only {len(out)} of {n} samples found")
