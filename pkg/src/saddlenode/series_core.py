"""
Truncated formal power series in ``(x, y1, y2)``.

Every series carries a truncation pair ``(K, D)``: powers ``x^m`` with
``m < K`` and total ``y``-degree ``n1 + n2 <= D`` are kept.  Storage is a
dense complex table of shape ``(K, P)`` where the ``P`` columns enumerate
the ``y``-monomials of degree ``<= D``; the public ``coeffs`` view is the
sparse, lexicographically ordered map of nonzero coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

EPS_COEFF = 1e-12
EPS_EQUAL = 1e-9


class SeriesError(ValueError):
    """Base class for series errors."""


class OrderMismatchError(SeriesError):
    """Operands carry different truncation orders."""


class SubstitutionDomainError(SeriesError):
    """Substituted series has a nonzero constant term."""


class FlowTimeError(SeriesError):
    """Flow time has a nonzero constant term."""


class MultiIndex(NamedTuple):
    m: int
    n1: int
    n2: int


# ---------------------------------------------------------------------------
# monomial tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Table:
    D: int
    mono: np.ndarray  # (P, 2)
    index: dict
    deg: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray
    scatter: np.ndarray  # (npairs, P) 0/1
    d1_src: np.ndarray
    d1_dst: np.ndarray
    d1_fac: np.ndarray
    d2_src: np.ndarray
    d2_dst: np.ndarray
    d2_fac: np.ndarray
    resonant: np.ndarray

    @property
    def P(self) -> int:
        return len(self.mono)


@lru_cache(maxsize=None)
def monomial_table(D: int) -> _Table:
    """Column layout and product tables for total y-degree ``<= D``."""
    mono = [(n1, d - n1) for d in range(D + 1) for n1 in range(d, -1, -1)]
    index = {mn: i for i, mn in enumerate(mono)}
    mono_arr = np.array(mono, dtype=int).reshape(-1, 2)
    deg = mono_arr.sum(axis=1)
    pa, pb, tgt = [], [], []
    for i, (a1, a2) in enumerate(mono):
        for j, (b1, b2) in enumerate(mono):
            if a1 + a2 + b1 + b2 <= D:
                pa.append(i)
                pb.append(j)
                tgt.append(index[(a1 + b1, a2 + b2)])
    scatter = np.zeros((len(pa), len(mono)))
    scatter[np.arange(len(pa)), tgt] = 1.0
    d1s, d1d, d1f, d2s, d2d, d2f = [], [], [], [], [], []
    for i, (n1, n2) in enumerate(mono):
        if n1 > 0:
            d1s.append(i)
            d1d.append(index[(n1 - 1, n2)])
            d1f.append(n1)
        if n2 > 0:
            d2s.append(i)
            d2d.append(index[(n1, n2 - 1)])
            d2f.append(n2)
    return _Table(
        D=D,
        mono=mono_arr,
        index=index,
        deg=deg,
        pair_a=np.array(pa, dtype=int),
        pair_b=np.array(pb, dtype=int),
        scatter=scatter,
        d1_src=np.array(d1s, dtype=int),
        d1_dst=np.array(d1d, dtype=int),
        d1_fac=np.array(d1f, dtype=float),
        d2_src=np.array(d2s, dtype=int),
        d2_dst=np.array(d2d, dtype=int),
        d2_fac=np.array(d2f, dtype=float),
        resonant=mono_arr[:, 0] == mono_arr[:, 1],
    )


def _xconv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise truncated Cauchy product in ``x`` (first axis)."""
    K = a.shape[0]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    for i in range(K):
        ai = a[i]
        if np.any(ai):
            out[i:] += ai * b[: K - i]
    return out


def _chop(c: np.ndarray, eps: float = EPS_COEFF) -> np.ndarray:
    c = np.array(c, dtype=complex)
    c[np.abs(c) < eps] = 0.0
    return c


# ---------------------------------------------------------------------------
# univariate series
# ---------------------------------------------------------------------------


class UniSeries:
    """Truncated power series in a single variable (``x`` or ``v = y1 y2``).

    Parameters
    ----------
    coeffs : sequence of complex
        Taylor coefficients, index = power.
    order : int, optional
        Truncation order ``K`` (powers ``< K`` are kept).  Defaults to
        ``len(coeffs)``.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs: Sequence[complex] | np.ndarray, order: int | None = None):
        c = np.asarray(coeffs, dtype=complex).ravel()
        K = len(c) if order is None else int(order)
        out = np.zeros(K, dtype=complex)
        n = min(K, len(c))
        out[:n] = c[:n]
        self.c = out

    @classmethod
    def zeros(cls, order: int) -> "UniSeries":
        return cls(np.zeros(order), order)

    @classmethod
    def monomial(cls, power: int, order: int, coeff: complex = 1.0) -> "UniSeries":
        c = np.zeros(order, dtype=complex)
        if power < order:
            c[power] = coeff
        return cls(c)

    @property
    def order(self) -> int:
        return len(self.c)

    @property
    def coeffs(self) -> np.ndarray:
        return self.c.copy()

    def __len__(self) -> int:
        return len(self.c)

    def __getitem__(self, k: int) -> complex:
        return complex(self.c[k]) if 0 <= k < len(self.c) else 0j

    def _other(self, other) -> np.ndarray:
        if isinstance(other, UniSeries):
            if other.order != self.order:
                raise OrderMismatchError(f"orders {self.order} and {other.order} differ")
            return other.c
        c = np.zeros(self.order, dtype=complex)
        c[0] = other
        return c

    def __add__(self, other) -> "UniSeries":
        return UniSeries(self.c + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> "UniSeries":
        return UniSeries(self.c - self._other(other))

    def __rsub__(self, other) -> "UniSeries":
        return UniSeries(self._other(other) - self.c)

    def __neg__(self) -> "UniSeries":
        return UniSeries(-self.c)

    def __mul__(self, other) -> "UniSeries":
        if isinstance(other, UniSeries):
            o = self._other(other)
            return UniSeries(np.convolve(self.c, o)[: self.order])
        return UniSeries(self.c * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "UniSeries":
        if isinstance(other, UniSeries):
            return self * other.reciprocal()
        return UniSeries(self.c / other)

    def deriv(self) -> "UniSeries":
        k = np.arange(1, self.order)
        return UniSeries(self.c[1:] * k, self.order)

    def integral(self) -> "UniSeries":
        """Antiderivative vanishing at 0."""
        c = np.zeros(self.order, dtype=complex)
        c[1:] = self.c[:-1] / np.arange(1, self.order)
        return UniSeries(c)

    def shift(self, k: int) -> "UniSeries":
        """Multiply by ``t^k`` (``k`` may be negative when divisible)."""
        c = np.zeros(self.order, dtype=complex)
        if k >= 0:
            c[k:] = self.c[: self.order - k]
        else:
            c[: self.order + k] = self.c[-k:]
        return UniSeries(c)

    def reciprocal(self) -> "UniSeries":
        c0 = self.c[0]
        if c0 == 0:
            raise ZeroDivisionError("series with zero constant term is not invertible")
        out = np.zeros(self.order, dtype=complex)
        out[0] = 1.0 / c0
        for k in range(1, self.order):
            out[k] = -np.dot(self.c[1 : k + 1], out[k - 1 :: -1][:k]) / c0
        return UniSeries(out)

    def exp(self) -> "UniSeries":
        """``exp`` via the recurrence ``E' = f' E``."""
        K = self.order
        e = np.zeros(K, dtype=complex)
        e[0] = np.exp(self.c[0])
        df = self.c[1:] * np.arange(1, K)
        for k in range(1, K):
            e[k] = np.dot(df[:k], e[k - 1 :: -1][:k]) / k
        return UniSeries(e)

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.c)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.c))) if self.order else 0.0

    def allclose(self, other: "UniSeries", tol: float = EPS_EQUAL) -> bool:
        return float(np.max(np.abs(self.c - self._other(other)), initial=0.0)) <= tol

    def __repr__(self) -> str:
        return f"UniSeries({np.array2string(self.c, precision=6)})"


# ---------------------------------------------------------------------------
# multivariate series
# ---------------------------------------------------------------------------


class MultiSeries:
    """Truncated series ``sum f_{m,n1,n2} x^m y1^n1 y2^n2``.

    Parameters
    ----------
    table : ndarray, shape (K, P)
        Coefficients; column ``j`` is the ``y``-monomial
        ``monomial_table(D).mono[j]``.
    K, D : int
        Truncation orders in ``x`` and in total ``y``-degree.
    valid_x : int, optional
        Honest ``x``-order: coefficients with ``m >= valid_x`` may be
        incomplete because of order loss upstream.  Defaults to ``K``.
    """

    __slots__ = ("_c", "K", "D", "valid_x")

    def __init__(self, table: np.ndarray, K: int, D: int, valid_x: int | None = None):
        P = monomial_table(D).P
        t = np.asarray(table)
        if t.shape != (K, P):
            raise SeriesError(f"table shape {t.shape} does not match (K={K}, P={P})")
        self._c = _chop(t)
        self._c.setflags(write=False)
        self.K = int(K)
        self.D = int(D)
        self.valid_x = int(K if valid_x is None else min(valid_x, K))

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, K: int, D: int) -> "MultiSeries":
        return cls(np.zeros((K, monomial_table(D).P), dtype=complex), K, D)

    @classmethod
    def monomial(cls, m: int, n1: int, n2: int, K: int, D: int, coeff: complex = 1.0) -> "MultiSeries":
        tab = monomial_table(D)
        c = np.zeros((K, tab.P), dtype=complex)
        if m < K and n1 + n2 <= D:
            c[m, tab.index[(n1, n2)]] = coeff
        return cls(c, K, D)

    @classmethod
    def constant(cls, value: complex, K: int, D: int) -> "MultiSeries":
        return cls.monomial(0, 0, 0, K, D, value)

    @classmethod
    def x(cls, K: int, D: int) -> "MultiSeries":
        return cls.monomial(1, 0, 0, K, D)

    @classmethod
    def y1(cls, K: int, D: int) -> "MultiSeries":
        return cls.monomial(0, 1, 0, K, D)

    @classmethod
    def y2(cls, K: int, D: int) -> "MultiSeries":
        return cls.monomial(0, 0, 1, K, D)

    @classmethod
    def from_dict(cls, coeffs: Mapping[tuple, complex], K: int, D: int) -> "MultiSeries":
        """Build from ``{(m, n1, n2): c}``; out-of-range keys are dropped."""
        tab = monomial_table(D)
        c = np.zeros((K, tab.P), dtype=complex)
        for (m, n1, n2), v in coeffs.items():
            if m < 0 or n1 < 0 or n2 < 0:
                raise SeriesError(f"negative exponent in {(m, n1, n2)}")
            if m < K and n1 + n2 <= D:
                c[m, tab.index[(n1, n2)]] += v
        return cls(c, K, D)

    @classmethod
    def from_x_series(cls, u: UniSeries | Sequence[complex], K: int, D: int) -> "MultiSeries":
        """Embed a series in ``x`` alone."""
        uc = u.c if isinstance(u, UniSeries) else np.asarray(u, dtype=complex)
        c = np.zeros((K, monomial_table(D).P), dtype=complex)
        n = min(K, len(uc))
        c[:n, 0] = uc[:n]
        return cls(c, K, D)

    @classmethod
    def from_v_series(cls, u: UniSeries | Sequence[complex], K: int, D: int, m: int = 0) -> "MultiSeries":
        """Embed ``x^m u(y1 y2)``."""
        tab = monomial_table(D)
        uc = u.c if isinstance(u, UniSeries) else np.asarray(u, dtype=complex)
        c = np.zeros((K, tab.P), dtype=complex)
        if m < K:
            for k, val in enumerate(uc):
                if 2 * k <= D:
                    c[m, tab.index[(k, k)]] = val
        return cls(c, K, D)

    @classmethod
    def from_function(cls, fn: Callable[[int, int, int], complex], K: int, D: int) -> "MultiSeries":
        tab = monomial_table(D)
        c = np.array([[fn(m, n1, n2) for n1, n2 in tab.mono] for m in range(K)], dtype=complex)
        return cls(c, K, D)

    # -- views ----------------------------------------------------------------

    @property
    def table(self) -> np.ndarray:
        return self._c

    @property
    def x_order(self) -> int:
        return self.K

    @property
    def y_order(self) -> int:
        return self.D

    @property
    def coeffs(self) -> dict[MultiIndex, complex]:
        """Sparse lexicographic view of the nonzero coefficients."""
        tab = monomial_table(self.D)
        out = {}
        ms, js = np.nonzero(self._c)
        keys = sorted(
            (int(m), int(tab.mono[j, 0]), int(tab.mono[j, 1]), j) for m, j in zip(ms, js)
        )
        for m, n1, n2, j in keys:
            out[MultiIndex(m, n1, n2)] = complex(self._c[m, j])
        return out

    def coeff(self, m: int, n1: int, n2: int) -> complex:
        if m >= self.K or n1 + n2 > self.D or min(m, n1, n2) < 0:
            return 0j
        return complex(self._c[m, monomial_table(self.D).index[(n1, n2)]])

    def x_coeff(self, n1: int, n2: int) -> UniSeries:
        """The ``x``-series multiplying ``y1^n1 y2^n2``."""
        if n1 + n2 > self.D:
            return UniSeries.zeros(self.K)
        return UniSeries(self._c[:, monomial_table(self.D).index[(n1, n2)]])

    def v_coeff(self, m: int = 0) -> UniSeries:
        """Resonant part at ``x^m`` as a series in ``v = y1 y2``."""
        tab = monomial_table(self.D)
        return UniSeries([self._c[m, tab.index[(k, k)]] for k in range(self.D // 2 + 1)])

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_abs() <= tol

    def max_abs(self, x_below: int | None = None, mask: np.ndarray | None = None) -> float:
        c = self._c if x_below is None else self._c[:x_below]
        if mask is not None:
            c = c[mask[: c.shape[0]]]
        return float(np.max(np.abs(c), initial=0.0))

    def nnz(self) -> int:
        return int(np.count_nonzero(self._c))

    def x_valuation(self) -> int | None:
        rows = np.nonzero(np.any(self._c != 0, axis=1))[0]
        return int(rows[0]) if len(rows) else None

    def y_valuation(self) -> int | None:
        cols = np.nonzero(np.any(self._c != 0, axis=0))[0]
        return int(monomial_table(self.D).deg[cols].min()) if len(cols) else None

    def constant_term(self) -> complex:
        return complex(self._c[0, 0])

    def y_degree_part(self, lo: int, hi: int | None = None) -> "MultiSeries":
        """Terms with ``lo <= n1+n2 <= hi``."""
        hi = lo if hi is None else hi
        deg = monomial_table(self.D).deg
        keep = (deg >= lo) & (deg <= hi)
        return self._new(self._c * keep[None, :])

    def x_part(self, lo: int, hi: int | None = None) -> "MultiSeries":
        """Terms with ``lo <= m <= hi``."""
        hi = self.K - 1 if hi is None else hi
        c = np.zeros_like(self._c)
        c[lo : hi + 1] = self._c[lo : hi + 1]
        return self._new(c)

    def truncate_x(self, k: int) -> "MultiSeries":
        """Zero out ``x^m`` for ``m >= k`` keeping the orders."""
        return self.x_part(0, k - 1)

    def with_orders(self, K: int, D: int) -> "MultiSeries":
        """Explicit re-truncation (or zero padding) to new orders."""
        tab_new = monomial_table(D)
        tab_old = monomial_table(self.D)
        c = np.zeros((K, tab_new.P), dtype=complex)
        kk = min(K, self.K)
        for j, (n1, n2) in enumerate(tab_new.mono):
            i = tab_old.index.get((int(n1), int(n2)))
            if i is not None:
                c[:kk, j] = self._c[:kk, i]
        return MultiSeries(c, K, D, min(self.valid_x, K) if K <= self.K else self.valid_x)

    # -- arithmetic -----------------------------------------------------------

    def _new(self, c: np.ndarray, valid_x: int | None = None) -> "MultiSeries":
        return MultiSeries(c, self.K, self.D, self.valid_x if valid_x is None else valid_x)

    def _check(self, other: "MultiSeries") -> None:
        if (self.K, self.D) != (other.K, other.D):
            raise OrderMismatchError(
                f"truncation orders ({self.K}, {self.D}) and ({other.K}, {other.D}) differ"
            )

    def _coerce(self, other) -> "MultiSeries":
        if isinstance(other, MultiSeries):
            self._check(other)
            return other
        if isinstance(other, UniSeries):
            return MultiSeries.from_x_series(other, self.K, self.D)
        return MultiSeries.constant(complex(other), self.K, self.D)

    def __add__(self, other) -> "MultiSeries":
        o = self._coerce(other)
        return self._new(self._c + o._c, min(self.valid_x, o.valid_x))

    __radd__ = __add__

    def __sub__(self, other) -> "MultiSeries":
        o = self._coerce(other)
        return self._new(self._c - o._c, min(self.valid_x, o.valid_x))

    def __rsub__(self, other) -> "MultiSeries":
        return self._coerce(other) - self

    def __neg__(self) -> "MultiSeries":
        return self._new(-self._c)

    def __mul__(self, other) -> "MultiSeries":
        if isinstance(other, (int, float, complex, np.number)):
            return self._new(self._c * other)
        o = self._coerce(other)
        return self._new(_mul_tables(self._c, o._c, self.D), _mul_valid(self, o))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "MultiSeries":
        if isinstance(other, (int, float, complex, np.number)):
            return self._new(self._c / other)
        return self * self._coerce(other).reciprocal()

    def __pow__(self, k: int) -> "MultiSeries":
        if k < 0:
            return self.reciprocal() ** (-k)
        out = MultiSeries.constant(1.0, self.K, self.D)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def mul_x(self, k: int = 1) -> "MultiSeries":
        """Multiply by ``x^k``; negative ``k`` divides (lower terms must vanish)."""
        c = np.zeros_like(self._c)
        if k >= 0:
            c[k:] = self._c[: self.K - k]
            return self._new(c, min(self.K, self.valid_x + k))
        if np.any(self._c[: -k] != 0):
            raise SeriesError(f"series is not divisible by x^{-k}")
        c[: self.K + k] = self._c[-k:]
        return self._new(c, self.valid_x + k)

    def mul_x_series(self, u: UniSeries) -> "MultiSeries":
        """Product with a series in ``x`` alone."""
        if u.order != self.K:
            u = UniSeries(u.c, self.K)
        return self._new(_xconv(self._c, u.c[:, None] * np.ones((1, self._c.shape[1]))))

    def scale_monomials(self, fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]) -> "MultiSeries":
        """Multiply coefficient ``(m, n1, n2)`` by ``fn(m, n1, n2)`` (broadcast)."""
        tab = monomial_table(self.D)
        m = np.arange(self.K)[:, None]
        return self._new(self._c * fn(m, tab.mono[None, :, 0], tab.mono[None, :, 1]))

    def reciprocal(self) -> "MultiSeries":
        c0 = self.constant_term()
        if c0 == 0:
            raise ZeroDivisionError("series with zero constant term is not invertible")
        u = self / c0 - 1.0
        out = MultiSeries.constant(1.0, self.K, self.D)
        term = out
        for _ in range(self.K + self.D):
            term = -(term * u)
            if term.is_zero():
                break
            out = out + term
        return out / c0

    def exp(self) -> "MultiSeries":
        c0 = self.constant_term()
        u = self - c0
        out = MultiSeries.constant(1.0, self.K, self.D)
        term = out
        for k in range(1, self.K + self.D + 1):
            term = term * u / k
            if term.is_zero():
                break
            out = out + term
        return out * np.exp(c0)

    # -- calculus -------------------------------------------------------------

    def deriv_x(self) -> "MultiSeries":
        c = np.zeros_like(self._c)
        c[:-1] = self._c[1:] * np.arange(1, self.K)[:, None]
        return self._new(c, self.valid_x - 1)

    def deriv_y1(self) -> "MultiSeries":
        tab = monomial_table(self.D)
        c = np.zeros_like(self._c)
        c[:, tab.d1_dst] = self._c[:, tab.d1_src] * tab.d1_fac
        return self._new(c)

    def deriv_y2(self) -> "MultiSeries":
        tab = monomial_table(self.D)
        c = np.zeros_like(self._c)
        c[:, tab.d2_dst] = self._c[:, tab.d2_src] * tab.d2_fac
        return self._new(c)

    def div_y(self, which: int, tol: float = 0.0) -> "MultiSeries":
        """Divide by ``y1`` (``which=1``) or ``y2`` (``which=2``).

        Coefficients of monomials not divisible by the variable must be
        below ``tol`` in magnitude; they are discarded.
        """
        tab = monomial_table(self.D)
        col = 0 if which == 1 else 1
        bad = tab.mono[:, col] == 0
        rem = float(np.max(np.abs(self._c[:, bad]), initial=0.0))
        if rem > tol:
            raise SeriesError(f"series is not divisible by y{which} (remainder {rem:.3e})")
        src = np.nonzero(~bad)[0]
        shift = np.array([0, 0])
        shift[col] = 1
        dst = [tab.index[(int(a) - shift[0], int(b) - shift[1])] for a, b in tab.mono[src]]
        c = np.zeros_like(self._c)
        c[:, dst] = self._c[:, src]
        return self._new(c)

    def integrate_x_over_x(self) -> "MultiSeries":
        """``int_0^x f(s, y)/s ds`` for ``f`` vanishing at ``x = 0``."""
        if np.any(self._c[0] != 0):
            raise SeriesError("series does not vanish at x = 0")
        c = np.zeros_like(self._c)
        c[1:] = self._c[1:] / np.arange(1, self.K)[:, None]
        return self._new(c)

    # -- evaluation -----------------------------------------------------------

    def __call__(self, x, y1, y2):
        """Evaluate the truncated polynomial (broadcasting over arrays)."""
        x, y1, y2 = np.broadcast_arrays(
            np.asarray(x, dtype=complex), np.asarray(y1, dtype=complex), np.asarray(y2, dtype=complex)
        )
        tab = monomial_table(self.D)
        xp = x[..., None] ** np.arange(self.K)
        ym = y1[..., None] ** tab.mono[:, 0] * y2[..., None] ** tab.mono[:, 1]
        return np.einsum("...m,mj,...j->...", xp, self._c, ym)

    # -- comparison / io --------------------------------------------------------

    def allclose(self, other: "MultiSeries", tol: float = EPS_EQUAL, x_below: int | None = None) -> bool:
        self._check(other)
        return (self - other).max_abs(x_below) <= tol

    def to_json_dict(self) -> dict:
        records = [
            {"m": k.m, "n1": k.n1, "n2": k.n2, "re": v.real, "im": v.imag}
            for k, v in self.coeffs.items()
        ]
        return {"x_order": self.K, "y_order": self.D, "records": records}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "MultiSeries":
        try:
            K = int(data["x_order"])
            D = int(data["y_order"])
            recs = data["records"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SeriesError(f"malformed series record: {exc}") from exc
        coeffs: dict = {}
        for i, r in enumerate(recs):
            try:
                key = (int(r["m"]), int(r["n1"]), int(r["n2"]))
                val = complex(float(r.get("re", 0.0)), float(r.get("im", 0.0)))
            except (KeyError, TypeError, ValueError) as exc:
                raise SeriesError(f"malformed record #{i}: {exc}") from exc
            if key[0] >= K or key[1] + key[2] > D:
                raise SeriesError(f"record #{i} {key} violates truncation ({K}, {D})")
            coeffs[key] = coeffs.get(key, 0) + val
        return cls.from_dict(coeffs, K, D)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def __repr__(self) -> str:
        terms = [f"({v:.6g})*x^{k.m}*y1^{k.n1}*y2^{k.n2}" for k, v in list(self.coeffs.items())[:8]]
        more = " + ..." if self.nnz() > 8 else ""
        return f"MultiSeries(K={self.K}, D={self.D}: {' + '.join(terms) or '0'}{more})"


def _mul_tables(a: np.ndarray, b: np.ndarray, D: int) -> np.ndarray:
    tab = monomial_table(D)
    ca = np.any(a != 0, axis=0)
    cb = np.any(b != 0, axis=0)
    sel = ca[tab.pair_a] & cb[tab.pair_b]
    if not np.any(sel):
        return np.zeros_like(a)
    pa = tab.pair_a[sel]
    pb = tab.pair_b[sel]
    prod = _xconv(a[:, pa], b[:, pb])
    return prod @ tab.scatter[sel]


def _mul_valid(a: MultiSeries, b: MultiSeries) -> int:
    va, vb = a.x_valuation(), b.x_valuation()
    cand = [a.K]
    if vb is not None:
        cand.append(a.valid_x + vb)
    if va is not None:
        cand.append(b.valid_x + va)
    return min(cand)


def arithmetic(a: MultiSeries, b: MultiSeries, kind: str) -> MultiSeries:
    """Truncated ring operation ``kind`` in ``{"add", "sub", "mul"}``."""
    a._check(b)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    raise ValueError(f"unknown kind {kind!r}")


def resonant_split(f: MultiSeries) -> tuple[MultiSeries, MultiSeries]:
    """Split into the ``n1 == n2`` part and the rest."""
    res = monomial_table(f.D).resonant
    return f._new(f.table * res[None, :]), f._new(f.table * ~res[None, :])


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def _powers(g: MultiSeries, n: int) -> list[MultiSeries]:
    out = [MultiSeries.constant(1.0, g.K, g.D)]
    for _ in range(n):
        out.append(out[-1] * g)
    return out


def compose_fibered(f: MultiSeries, g1: MultiSeries, g2: MultiSeries) -> MultiSeries:
    """Truncated substitution ``f(x, g1(x, y), g2(x, y))``.

    ``g1`` and ``g2`` must vanish at the origin.  When they contain pure
    ``x`` terms the result is only exact in low ``y``-degree; see
    :func:`honest_mask`.
    """
    f._check(g1)
    f._check(g2)
    for g in (g1, g2):
        if abs(g.constant_term()) > 0:
            raise SubstitutionDomainError("substituted series must have zero constant term")
    K, D = f.K, f.D
    tab = monomial_table(D)
    p1 = _powers(g1, D)
    p2 = _powers(g2, D)
    out = np.zeros((K, tab.P), dtype=complex)
    fc = f.table
    for a in range(D + 1):
        acc = np.zeros((K, tab.P), dtype=complex)
        any_term = False
        for b in range(D + 1 - a):
            col = fc[:, tab.index[(a, b)]]
            if not np.any(col):
                continue
            any_term = True
            acc += _xconv(col[:, None], p2[b].table)
        if any_term:
            out += _mul_tables(acc, p1[a].table, D)
    valid = min(f.valid_x, g1.valid_x, g2.valid_x)
    return MultiSeries(out, K, D, valid)


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolyVectorField:
    """``comp_x d/dx + comp_y1 d/dy1 + comp_y2 d/dy2``."""

    comp_x: MultiSeries
    comp_y1: MultiSeries
    comp_y2: MultiSeries

    def __post_init__(self):
        self.comp_x._check(self.comp_y1)
        self.comp_x._check(self.comp_y2)

    @property
    def K(self) -> int:
        return self.comp_x.K

    @property
    def D(self) -> int:
        return self.comp_x.D

    @property
    def components(self) -> tuple[MultiSeries, MultiSeries, MultiSeries]:
        return self.comp_x, self.comp_y1, self.comp_y2

    def lie(self, f: MultiSeries) -> MultiSeries:
        return lie_derivative(self, f)

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(*(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(*(a - b for a, b in zip(self.components, other.components)))

    def scale(self, u: MultiSeries | complex) -> "PolyVectorField":
        return PolyVectorField(*(c * u for c in self.components))

    def max_abs(self, x_below: int | None = None) -> float:
        return max(c.max_abs(x_below) for c in self.components)

    def __call__(self, x, y1, y2):
        return tuple(c(x, y1, y2) for c in self.components)

    def to_json_dict(self) -> dict:
        return {
            "comp_x": self.comp_x.to_json_dict(),
            "comp_y1": self.comp_y1.to_json_dict(),
            "comp_y2": self.comp_y2.to_json_dict(),
        }

    @classmethod
    def zeros(cls, K: int, D: int) -> "PolyVectorField":
        z = MultiSeries.zeros(K, D)
        return cls(z, z, z)


def lie_derivative(V: PolyVectorField, f: MultiSeries) -> MultiSeries:
    """``L_V f`` with the honest ``x``-order recorded in ``valid_x``."""
    V.comp_x._check(f)
    out = V.comp_y1 * f.deriv_y1() + V.comp_y2 * f.deriv_y2()
    vx = V.comp_x.x_valuation()
    if vx is None:
        return out
    fx = f.deriv_x()
    term = V.comp_x * fx
    valid = min(f.K, f.valid_x - 1 + vx, V.comp_x.valid_x + (fx.x_valuation() or 0))
    return MultiSeries((out + term).table, f.K, f.D, min(valid, out.valid_x))


def c_basis(K: int, D: int) -> PolyVectorField:
    """``-y1 d/dy1 + y2 d/dy2``."""
    return PolyVectorField(
        MultiSeries.zeros(K, D), -MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    )


def r_basis(K: int, D: int) -> PolyVectorField:
    """``y1 d/dy1 + y2 d/dy2``."""
    return PolyVectorField(MultiSeries.zeros(K, D), MultiSeries.y1(K, D), MultiSeries.y2(K, D))


def apply_lc(f: MultiSeries) -> MultiSeries:
    """``L_C f``: multiply ``y1^n1 y2^n2`` by ``n2 - n1``."""
    return f.scale_monomials(lambda m, n1, n2: (n2 - n1) + 0 * m)


def apply_lr(f: MultiSeries) -> MultiSeries:
    """``L_R f``: multiply ``y1^n1 y2^n2`` by ``n1 + n2``."""
    return f.scale_monomials(lambda m, n1, n2: (n1 + n2) + 0 * m)


# ---------------------------------------------------------------------------
# fibered maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConjugacyMap:
    """Fibered map ``(x, y) -> (x, comp_y1(x, y), comp_y2(x, y))``."""

    comp_y1: MultiSeries
    comp_y2: MultiSeries
    is_tangent_to_identity: bool = True
    provenance: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.comp_y1._check(self.comp_y2)

    @property
    def K(self) -> int:
        return self.comp_y1.K

    @property
    def D(self) -> int:
        return self.comp_y1.D

    @classmethod
    def identity(cls, K: int, D: int, provenance: Iterable[str] = ()) -> "ConjugacyMap":
        return cls(MultiSeries.y1(K, D), MultiSeries.y2(K, D), True, tuple(provenance))

    @classmethod
    def linear(cls, P: np.ndarray, K: int, D: int, provenance: Iterable[str] = ()) -> "ConjugacyMap":
        """``y -> P y`` for a constant matrix ``P``."""
        y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
        P = np.asarray(P, dtype=complex)
        tangent = bool(np.allclose(P, np.eye(2), atol=EPS_EQUAL))
        return cls(P[0, 0] * y1 + P[0, 1] * y2, P[1, 0] * y1 + P[1, 1] * y2, tangent, tuple(provenance))

    def compose(self, inner: "ConjugacyMap") -> "ConjugacyMap":
        """``self o inner``."""
        c1 = compose_fibered(self.comp_y1, inner.comp_y1, inner.comp_y2)
        c2 = compose_fibered(self.comp_y2, inner.comp_y1, inner.comp_y2)
        return ConjugacyMap(
            c1,
            c2,
            self.is_tangent_to_identity and inner.is_tangent_to_identity,
            inner.provenance + self.provenance,
        )

    def linear_part(self) -> np.ndarray:
        """Constant Jacobian matrix in ``y`` at the origin."""
        return np.array(
            [
                [self.comp_y1.coeff(0, 1, 0), self.comp_y1.coeff(0, 0, 1)],
                [self.comp_y2.coeff(0, 1, 0), self.comp_y2.coeff(0, 0, 1)],
            ]
        )

    def inverse(self, max_iter: int | None = None) -> "ConjugacyMap":
        """Formal inverse by fixed-point iteration ``psi <- psi - M0^{-1}(phi(psi) - y)``."""
        K, D = self.K, self.D
        M0 = self.linear_part()
        if abs(np.linalg.det(M0)) < EPS_EQUAL:
            raise SeriesError("map is not invertible: singular linear part")
        Minv = np.linalg.inv(M0)
        y1, y2 = MultiSeries.y1(K, D), MultiSeries.y2(K, D)
        c1 = self.comp_y1 - self.comp_y1.constant_term()
        c2 = self.comp_y2 - self.comp_y2.constant_term()
        if abs(self.comp_y1.constant_term()) + abs(self.comp_y2.constant_term()) > 0:
            raise SubstitutionDomainError("map does not fix the origin")
        psi1 = Minv[0, 0] * y1 + Minv[0, 1] * y2
        psi2 = Minv[1, 0] * y1 + Minv[1, 1] * y2
        n_iter = max_iter or (K + D + 2)
        for _ in range(n_iter):
            e1 = compose_fibered(c1, psi1, psi2) - y1
            e2 = compose_fibered(c2, psi1, psi2) - y2
            if max(e1.max_abs(), e2.max_abs()) < EPS_COEFF:
                break
            psi1 = psi1 - (Minv[0, 0] * e1 + Minv[0, 1] * e2)
            psi2 = psi2 - (Minv[1, 0] * e1 + Minv[1, 1] * e2)
        return ConjugacyMap(
            psi1, psi2, self.is_tangent_to_identity, self.provenance + ("inverse",)
        )

    def pushforward(self, Y: PolyVectorField, inverse: "ConjugacyMap | None" = None) -> PolyVectorField:
        """``Phi_* Y = (D Phi . Y) o Phi^{-1}``."""
        inv = inverse or self.inverse()
        l1 = lie_derivative(Y, self.comp_y1)
        l2 = lie_derivative(Y, self.comp_y2)
        return PolyVectorField(
            Y.comp_x,
            compose_fibered(l1, inv.comp_y1, inv.comp_y2),
            compose_fibered(l2, inv.comp_y1, inv.comp_y2),
        )

    def jacobian_det(self) -> MultiSeries:
        """Determinant of the ``y``-Jacobian."""
        return (
            self.comp_y1.deriv_y1() * self.comp_y2.deriv_y2()
            - self.comp_y1.deriv_y2() * self.comp_y2.deriv_y1()
        )

    def __call__(self, x, y1, y2):
        return np.asarray(x, dtype=complex), self.comp_y1(x, y1, y2), self.comp_y2(x, y1, y2)

    def to_json_dict(self) -> dict:
        return {
            "comp_y1": self.comp_y1.to_json_dict(),
            "comp_y2": self.comp_y2.to_json_dict(),
            "is_tangent_to_identity": self.is_tangent_to_identity,
            "provenance": list(self.provenance),
        }


def exp_flow_map(tau: MultiSeries, weights: tuple[int, int] = (1, 1)) -> ConjugacyMap:
    """``(y1 exp(w1 tau), y2 exp(w2 tau))``.

    Weights ``(1, 1)`` give the radial flow, ``(-1, 1)`` the tangential one.
    """
    if abs(tau.constant_term()) > 0:
        raise FlowTimeError("flow time must vanish at the origin")
    K, D = tau.K, tau.D
    w1, w2 = weights
    c1 = MultiSeries.y1(K, D) * (w1 * tau).exp()
    c2 = MultiSeries.y2(K, D) * (w2 * tau).exp()
    return ConjugacyMap(c1, c2, True, (f"flow{tuple(weights)}",))


def exp_flow_inverse_time(tau: MultiSeries, weights: tuple[int, int] = (1, 1), max_iter: int | None = None) -> MultiSeries:
    """Time ``s`` with ``exp_flow_map(s) = exp_flow_map(tau)^{-1}``.

    Solves ``s = -tau o exp_flow_map(s)`` by fixed-point iteration; each
    pass gains at least one order in ``(x, y)``.
    """
    if abs(tau.constant_term()) > 0:
        raise FlowTimeError("flow time must vanish at the origin")
    s = -tau
    for _ in range(max_iter or (tau.K + tau.D + 2)):
        m = exp_flow_map(s, weights)
        new = -compose_fibered(tau, m.comp_y1, m.comp_y2)
        if (new - s).max_abs() < EPS_COEFF:
            return new
        s = new
    return s


def honest_mask(K: int, D: int, nu: int | None, x_below: int | None = None) -> np.ndarray:
    """Boolean ``(K, P)`` mask of coefficients unaffected by ``y``-truncation.

    When a substituted map has pure ``x`` terms of ``x``-valuation ``nu``,
    dropped terms of ``y``-degree ``> D`` leak into ``(m, n)`` only when
    ``n + floor(m / nu) > D``.
    """
    tab = monomial_table(D)
    m = np.arange(K)[:, None]
    n = tab.deg[None, :]
    mask = np.ones((K, tab.P), dtype=bool)
    if nu is not None:
        mask &= (n + m // nu) <= D
    if x_below is not None:
        mask &= m < x_below
    return mask
