"""Confluent hypergeometric functions and the Gamma function.

Only real arguments are supported.  The Kummer function ``M(a, b, x)`` is
summed as a Taylor series (compensated summation) and switches to its
large-``x`` asymptotic expansion once that expansion converges to machine
precision.  The Tricomi function ``U(a, b, x)`` is evaluated from its
Laplace-type integral for ``a > 0`` and by the three-term recurrence in ``a``
(run in the stable downward direction) for ``a <= 0``.

The frequently used pair ``a = -1/2, b = 1`` also has closed forms in terms
of modified Bessel functions which are exposed as vectorised fast paths.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

__all__ = [
    "gamma_fn",
    "kummer_m",
    "tricomi_u",
    "kummer_m_half",
    "tricomi_u_half",
]

_LOG_MAX = math.log(np.finfo(float).max)
_SERIES_MAX_X = 40.0


def _is_nonpositive_int(v: float) -> bool:
    return v <= 0 and float(v).is_integer()


def gamma_fn(x: float) -> float:
    """Gamma function.

    Parameters
    ----------
    x : float
        Argument, not a non-positive integer.

    Returns
    -------
    float

    Raises
    ------
    ValueError
        At the poles ``0, -1, -2, ...``.
    """
    x = float(x)
    if _is_nonpositive_int(x):
        raise ValueError(f"gamma_fn has a pole at x={x}")
    return math.gamma(x)


# ---------------------------------------------------------------------------
# Kummer M
# ---------------------------------------------------------------------------


def _m_series(a: float, b: float, x: float) -> float:
    """Taylor series of M with Kahan summation."""
    total = 1.0
    comp = 0.0
    term = 1.0
    n = 0
    while True:
        term *= (a + n) / (b + n) * x / (n + 1)
        n += 1
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if term == 0.0:
            break
        if abs(term) < 1e-17 * abs(total) and n > abs(a) and n > x:
            break
        if n > 100000:  # pragma: no cover - defensive
            raise ArithmeticError("Kummer series failed to converge")
    return total


def _m_asymptotic(a: float, b: float, x: float) -> float | None:
    """Large-x expansion; returns None if it does not reach full accuracy."""
    s = 1.0
    term = 1.0
    prev = math.inf
    for n in range(200):
        term *= (b - a + n) * (1 - a + n) / ((n + 1) * x)
        if abs(term) > abs(prev):
            return None
        s += term
        prev = term
        if abs(term) < 1e-16 * abs(s):
            break
    else:
        return None
    lg_b = math.lgamma(b)
    lg_a = math.lgamma(a)
    sign = special.gammasgn(b) * special.gammasgn(a)
    log_scale = lg_b - lg_a + x + (a - b) * math.log(x)
    if log_scale > _LOG_MAX:
        raise OverflowError(f"M({a}, {b}, {x}) exceeds the double range")
    return sign * math.exp(log_scale) * s


def _m_value(a: float, b: float, x: float) -> float:
    if x > _SERIES_MAX_X and not _is_nonpositive_int(a):
        val = _m_asymptotic(a, b, x)
        if val is not None:
            return val
    if x > _LOG_MAX:
        raise OverflowError(f"M({a}, {b}, {x}) exceeds the double range")
    val = _m_series(a, b, x)
    if not math.isfinite(val):
        raise OverflowError(f"M({a}, {b}, {x}) exceeds the double range")
    return val


def kummer_m(a: float, b: float, x: float) -> tuple[float, float]:
    """Kummer confluent hypergeometric function and its x-derivative.

    Parameters
    ----------
    a, b : float
        Parameters; ``b`` must not be a non-positive integer.
    x : float
        Non-negative argument.

    Returns
    -------
    value, derivative : float
        ``M(a, b, x)`` and ``(a / b) M(a + 1, b + 1, x)``.

    Raises
    ------
    ValueError
        For invalid ``b`` or negative ``x``.
    OverflowError
        When the result leaves the double range.
    """
    a, b, x = float(a), float(b), float(x)
    if _is_nonpositive_int(b):
        raise ValueError(f"b={b} is a non-positive integer")
    if not (x >= 0.0 and math.isfinite(x)):
        raise ValueError(f"x={x} must be finite and non-negative")
    value = _m_value(a, b, x)
    deriv = 0.0 if a == 0.0 else (a / b) * _m_value(a + 1, b + 1, x)
    return value, deriv


# ---------------------------------------------------------------------------
# Tricomi U
# ---------------------------------------------------------------------------


def _u_positive(a: float, b: float, x: float) -> float:
    """U(a, b, x) for a > 0 from the Laplace integral.

    ``U = x^(1-b) / Gamma(a) * int_0^inf exp(-u) u^(a-1) (x+u)^(b-a-1) du``
    """
    c = b - a - 1.0

    def logf(u):
        return (a - 1.0) * math.log(u) + c * math.log(x + u) - u

    # location of the integrand peak (only meaningful for a > 1)
    if a > 1.0:
        s = x - (a - 1.0) - c
        u_star = 0.5 * (-s + math.sqrt(s * s + 4.0 * (a - 1.0) * x))
        u_star = max(u_star, 1e-300)
        shift = logf(u_star)
    else:
        u_star = 0.0
        shift = 0.0
    width = math.sqrt(max(a, 1.0)) + 1.0
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=400)

    def g(u):
        if u <= 0.0:
            return 0.0
        return math.exp(logf(u) - shift)

    pieces = []
    if a >= 1.0:
        lo = max(u_star - 12 * width, 0.0)
        hi = u_star + 12 * width + 40.0
        cuts = sorted({0.0, lo, u_star, hi, min(x, hi)} | ({x} if 0 < x < hi else set()))
        cuts = [t for t in cuts if t >= 0.0]
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            if t1 > t0:
                pieces.append(integrate.quad(g, t0, t1, **opts)[0])
        pieces.append(integrate.quad(g, hi, np.inf, **opts)[0])
    else:
        # algebraic endpoint singularity u^(a-1): use the weighted rule near 0
        def smooth(u):
            return math.exp(c * math.log(x + u) - u)

        t1 = min(x, 1.0)
        pieces.append(
            integrate.quad(smooth, 0.0, t1, weight="alg", wvar=(a - 1.0, 0.0), **opts)[0]
        )
        if t1 < 1.0:
            pieces.append(integrate.quad(g, t1, 1.0, **opts)[0])
        pieces.append(integrate.quad(g, 1.0, 60.0, **opts)[0])
        pieces.append(integrate.quad(g, 60.0, np.inf, **opts)[0])
    total = math.fsum(pieces)
    log_val = math.log(total) + shift - math.lgamma(a) + (1.0 - b) * math.log(x)
    return math.exp(log_val)


def _u_value(a: float, b: float, x: float) -> float:
    if a > 0.0:
        return _u_positive(a, b, x)
    # downward recurrence in a from two positive anchors:
    # U(a-1) = (x + 2a - b) U(a) - a (a - b + 1) U(a+1)
    n = int(math.floor(a)) - 1  # number of steps below the anchor a0 = a - n
    a0 = a - n
    if a0 <= 0.0:
        a0 += 1.0
        n += 1
    u_hi = _u_positive(a0 + 1.0, b, x)
    u_cur = _u_positive(a0, b, x)
    ac = a0
    for _ in range(int(round(a0 - a))):
        u_next = (x + 2.0 * ac - b) * u_cur - ac * (ac - b + 1.0) * u_hi
        u_hi, u_cur = u_cur, u_next
        ac -= 1.0
    return u_cur


def tricomi_u(a: float, b: float, x: float) -> tuple[float, float]:
    """Tricomi confluent hypergeometric function and its x-derivative.

    Parameters
    ----------
    a : float
        First parameter.
    b : float
        Second parameter, ``b > 0``.
    x : float
        Positive argument.

    Returns
    -------
    value, derivative : float
        ``U(a, b, x)`` and ``-a U(a + 1, b + 1, x)``.

    Raises
    ------
    ValueError
        For ``x <= 0`` or ``b <= 0``.
    """
    a, b, x = float(a), float(b), float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError(f"x={x} must be positive")
    if b <= 0.0:
        raise ValueError(f"b={b} must be positive")
    if a == -0.5 and b == 1.0:
        v, d = tricomi_u_half(np.asarray(x))
        return float(v), float(d)
    value = _u_value(a, b, x)
    deriv = 0.0 if a == 0.0 else -a * _u_value(a + 1.0, b + 1.0, x)
    return value, deriv


# ---------------------------------------------------------------------------
# closed forms for a = -1/2, b = 1 (vectorised)
# ---------------------------------------------------------------------------

_SQRT_PI = math.sqrt(math.pi)


def kummer_m_half(x, strict: bool = True):
    """``M(-1/2, 1, x)`` and its derivative through modified Bessel functions.

    Uses ``M(-1/2,1,x) = e^{x/2}[(1-x) I0(x/2) + x I1(x/2)]`` and
    ``dM/dx = -e^{x/2}[I0(x/2) - I1(x/2)]/2``.

    Parameters
    ----------
    x : array_like
        Non-negative arguments.
    strict : bool
        If true, raise when ``x > 700``; otherwise such entries become
        ``-inf`` (value) and ``-inf`` (derivative).
    """
    x = np.asarray(x, dtype=float)
    if strict and np.any(x > 700.0):
        raise OverflowError("M(-1/2, 1, x) exceeds the double range")
    h = 0.5 * x
    with np.errstate(over="ignore"):
        e = np.exp(x)  # e^{x/2} * e^{x/2} from the scaled Bessel functions
    i0, i1 = special.i0e(h), special.i1e(h)
    with np.errstate(over="ignore", invalid="ignore"):
        value = e * ((1.0 - x) * i0 + x * i1)
        deriv = -0.5 * e * (i0 - i1)
    big = x > _SERIES_MAX_X
    if np.any(big):
        # the Bessel combination cancels like 1/x; use the asymptotic series
        xb = x[big]
        with np.errstate(over="ignore"):
            ex = np.exp(xb)
        value[big] = -ex * xb**-1.5 / (2.0 * _SQRT_PI) * _asymptotic_sum(1.5, 1.5, xb)
        deriv[big] = -0.5 * ex * xb**-1.5 / _SQRT_PI * _asymptotic_sum(0.5, 1.5, xb)
    return value, deriv


def _asymptotic_sum(p: float, q: float, x: np.ndarray, terms: int = 80) -> np.ndarray:
    """``sum_n (p)_n (q)_n / (n! x^n)`` truncated at its smallest term."""
    total = np.ones_like(x)
    term = np.ones_like(x)
    live = np.ones(x.shape, dtype=bool)
    for n in range(terms):
        nxt = term * (p + n) * (q + n) / ((n + 1) * x)
        live &= np.abs(nxt) < np.abs(term)
        term = np.where(live, nxt, 0.0)
        total = total + term
        if not np.any(live):
            break
    return total


def tricomi_u_half(x):
    """``U(-1/2, 1, x)`` and its derivative through modified Bessel functions.

    Uses ``U(-1/2,1,x) = [(x-1) K0(x/2) + x K1(x/2)] e^{x/2} / (2 sqrt(pi))``
    and ``dU/dx = [K0(x/2) + K1(x/2)] e^{x/2} / (4 sqrt(pi))``.

    Parameters
    ----------
    x : array_like
        Positive arguments.
    """
    x = np.asarray(x, dtype=float)
    h = 0.5 * x
    k0, k1 = special.k0e(h), special.k1e(h)
    value = ((x - 1.0) * k0 + x * k1) / (2.0 * _SQRT_PI)
    deriv = (k0 + k1) / (4.0 * _SQRT_PI)
    return value, deriv
