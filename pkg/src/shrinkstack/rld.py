"""Rotationally invariant solutions of the linearised shrinker equation.

The radial operator on the plane is

    L_k u = u'' + (1/r - r/2) u' + (1/2 - k^2) u,

whose solutions are ``phi_m = M(k^2 - 1/2, 1, r^2/4)`` (regular at the
origin) and ``phi_u = U(k^2 - 1/2, 1, r^2/4)`` (linear growth at infinity
for ``k = 0``).  Everything here is built from the ``k = 0`` pair, for which
Bessel closed forms give vectorised evaluation.

Radial profiles are stored as the coefficients of ``(phi_m, phi_u)`` on
each side of a jump radius, so values and derivatives are exact
evaluations of the basis rather than interpolated ODE output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize, special

from .specfun import gamma_fn, kummer_m, kummer_m_half, tricomi_u, tricomi_u_half

__all__ = [
    "RadialBasis",
    "DistinguishedRoots",
    "RadialProfile",
    "phi_mu_basis",
    "basis0",
    "find_roots",
    "h_hat",
    "h_hat_inv",
    "admissible_window",
    "phi_one",
    "avg_profile",
    "solve_phibar",
    "solve_jbar",
    "profile_grid",
]

SQRT_PI = math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# k = 0 basis (vectorised)
# ---------------------------------------------------------------------------


def basis0(r, order: int = 1):
    """Evaluate ``phi_m``, ``phi_u`` for ``k = 0`` with r-derivatives.

    Parameters
    ----------
    r : array_like
        Positive radii.
    order : {1, 2}
        Highest derivative returned.

    Returns
    -------
    pm, pu : tuple of ndarray
        ``(value, d/dr)`` or ``(value, d/dr, d2/dr2)`` for each function.
    """
    r = np.asarray(r, dtype=float)
    x = 0.25 * r * r
    m0, mx = kummer_m_half(x, strict=False)
    u0, ux = tricomi_u_half(x)
    pm = [m0, 0.5 * r * mx]
    pu = [u0, 0.5 * r * ux]
    if order >= 2:
        h = 0.5 * x
        with np.errstate(invalid="ignore", divide="ignore"):
            # M_xx = -e^{x/2} I1(x/2) / (2x),  U_xx = -e^{x/2} K1(x/2) / (4 sqrt(pi) x)
            ratio_i = np.where(x > 1e-8, special.i1e(h) / np.where(x > 0, x, 1.0), 0.25)
            with np.errstate(over="ignore"):
                mxx = -0.5 * np.exp(x) * ratio_i
            uxx = -special.k1e(h) / (4.0 * SQRT_PI * x)
        pm.append(0.5 * mx + x * mxx)
        pu.append(0.5 * ux + x * uxx)
    return tuple(pm), tuple(pu)


# ---------------------------------------------------------------------------
# general k
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialBasis:
    """Radial solutions ``phi_m``, ``phi_u`` at mode order ``k``.

    Attributes
    ----------
    k : int
        Mode order entering through ``a = k**2 - 1/2``.
    """

    k: int

    @property
    def a(self) -> float:
        return self.k * self.k - 0.5

    def eval_m(self, r: float) -> tuple[float, float]:
        """Return ``(phi_m(r), phi_m'(r))``."""
        if self.k == 0:
            pm, _ = basis0(r)
            return float(pm[0]), float(pm[1])
        v, dx = kummer_m(self.a, 1.0, 0.25 * r * r)
        return v, 0.5 * r * dx

    def eval_u(self, r: float) -> tuple[float, float]:
        """Return ``(phi_u(r), phi_u'(r))``."""
        if self.k == 0:
            _, pu = basis0(r)
            return float(pu[0]), float(pu[1])
        v, dx = tricomi_u(self.a, 1.0, 0.25 * r * r)
        return v, 0.5 * r * dx

    def wronskian(self, r: float) -> float:
        """Closed form of ``phi_m phi_u' - phi_u phi_m'``.

        From ``W_x[M, U] = -Gamma(b) x^{-b} e^x / Gamma(a)`` and the chain
        rule, ``W_r = -2 e^{r^2/4} / (r Gamma(k^2 - 1/2))``; at ``k = 0``
        this is ``e^{r^2/4} / (sqrt(pi) r)``.
        """
        return -2.0 * math.exp(0.25 * r * r) / (r * gamma_fn(self.a))

    def wronskian_numeric(self, r: float) -> float:
        m, dm = self.eval_m(r)
        u, du = self.eval_u(r)
        return m * du - u * dm


def phi_mu_basis(k: int) -> RadialBasis:
    """Build the radial basis at mode order ``k``.

    Parameters
    ----------
    k : int
        Non-negative mode order, ``k <= 50``.
    """
    if not (0 <= int(k) <= 50) or int(k) != k:
        raise ValueError("k must be an integer in [0, 50]")
    return RadialBasis(int(k))


# ---------------------------------------------------------------------------
# roots and the balance function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistinguishedRoots:
    """Zeros of ``phi_m``, ``phi_u`` and of the balance function."""

    r_m: float
    r_u: float
    r_mu: float


def h_hat(r):
    """Balance function ``(sqrt(pi)/2) e^{-r^2/4} (phi_m phi_u)' - (r/2) phi_m phi_u)``.

    Written in product form so it stays finite across the zeros of the
    basis functions.
    """
    r = np.asarray(r, dtype=float)
    (m0, m1), (u0, u1) = basis0(r)
    out = 0.5 * SQRT_PI * np.exp(-0.25 * r * r) * (m1 * u0 + m0 * u1 - 0.5 * r * m0 * u0)
    return out if out.ndim else float(out)


def _brent(f: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    flo, fhi = f(lo), f(hi)
    if not (np.sign(flo) * np.sign(fhi) < 0):
        raise ArithmeticError(f"cannot bracket {what} in [{lo}, {hi}]")
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)


@lru_cache(maxsize=1)
def find_roots() -> DistinguishedRoots:
    """Locate ``r_m``, ``r_u``, ``r_mu`` by Brent's method on fixed brackets."""
    r_m = _brent(lambda r: float(basis0(r)[0][0]), 2.0, 3.0, "r_m")
    r_u = _brent(lambda r: float(basis0(r)[1][0]), 0.5, 1.2, "r_u")
    r_mu = _brent(h_hat, 1.2, 2.0, "r_mu")
    return DistinguishedRoots(r_m=r_m, r_u=r_u, r_mu=r_mu)


def admissible_window() -> tuple[float, float]:
    """Open interval ``((r_u + r_mu)/2, (r_m + r_mu)/2)`` for lattice radii."""
    rt = find_roots()
    return 0.5 * (rt.r_u + rt.r_mu), 0.5 * (rt.r_m + rt.r_mu)


def h_hat_inv(y: float) -> float:
    """Inverse of :func:`h_hat` on the admissible window.

    Raises
    ------
    ValueError
        If ``y`` lies outside the range of ``h_hat`` on the window.
    """
    lo, hi = admissible_window()
    f_lo, f_hi = h_hat(lo), h_hat(hi)
    if not (f_hi <= y <= f_lo):
        raise ValueError(f"y={y} outside [{f_hi}, {f_lo}]")
    if y == 0.0:
        return find_roots().r_mu
    return optimize.brentq(lambda r: h_hat(r) - y, lo, hi, xtol=1e-15, rtol=1e-15)


def phi_one(r_bar: float, m: int) -> float:
    """``sqrt(pi) m phi_m phi_u e^{-r^2/4}`` at the jump radius."""
    (m0, _), (u0, _) = basis0(r_bar)
    return float(SQRT_PI * m * m0 * u0 * math.exp(-0.25 * r_bar * r_bar))


# ---------------------------------------------------------------------------
# radial profiles
# ---------------------------------------------------------------------------


def profile_grid(r_bar: float, n: int = 2048, r_min: float = 0.05, r_max: float = 100.0):
    """Geometric grid on ``[r_min, r_max]`` with ``r_bar`` inserted."""
    g = np.geomspace(r_min, r_max, n)
    return np.unique(np.append(g, r_bar))


# phi_m overflows past x ~ 700; profiles with a phi_m component outside the
# jump radius are tabulated only up to this radius.
_R_MAX_GROWING = 50.0


@dataclass(frozen=True)
class RadialProfile:
    """Piecewise combination ``alpha phi_m + beta phi_u`` with a jump radius.

    Attributes
    ----------
    center : float
        Jump radius ``r_bar``.
    coef_in, coef_out : tuple of float
        ``(alpha, beta)`` for ``r <= center`` and ``r > center``.
    r_grid, value, deriv : ndarray
        Tabulation on the profile grid.
    jump_deriv : float
        ``u'(center+) - u'(center-)``.
    """

    center: float
    coef_in: tuple[float, float]
    coef_out: tuple[float, float]
    r_grid: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)
    deriv: np.ndarray = field(repr=False)
    jump_deriv: float = 0.0

    @classmethod
    def from_coefficients(cls, center, coef_in, coef_out, grid=None) -> "RadialProfile":
        coef_in = (float(coef_in[0]), float(coef_in[1]))
        coef_out = (float(coef_out[0]), float(coef_out[1]))
        if grid is None:
            grid = profile_grid(center)
            if coef_out[0] != 0.0:
                grid = grid[grid <= _R_MAX_GROWING]
        tmp = cls(center, coef_in, coef_out, grid, grid, grid, 0.0)
        v, d = tmp.evaluate(grid)[:2]
        (m0, m1), (u0, u1) = basis0(center)
        d_in = coef_in[0] * m1 + coef_in[1] * u1
        d_out = coef_out[0] * m1 + coef_out[1] * u1
        return cls(center, coef_in, coef_out, grid, v, d, float(d_out - d_in))

    def evaluate(self, r, order: int = 1):
        """Evaluate value and r-derivatives at arbitrary radii.

        Points with ``r <= center`` use the inner coefficients.
        """
        r = np.asarray(r, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            # phi_u is logarithmic at the origin; its coefficient vanishes there
            pm, pu = basis0(r, order=max(order, 1))
        inside = r <= self.center
        a = np.where(inside, self.coef_in[0], self.coef_out[0])
        b = np.where(inside, self.coef_in[1], self.coef_out[1])
        with np.errstate(invalid="ignore", over="ignore"):
            # a zero coefficient must not turn an overflowed phi_m or the
            # logarithmic phi_u at the origin into nan
            out = [
                np.where(a == 0.0, 0.0, a * pm[i]) + np.where(b == 0.0, 0.0, b * pu[i])
                for i in range(len(pm))
            ]
        return tuple(out)

    def ode_residual(self, r=None) -> float:
        """Relative residual of ``u'' + (1/r - r/2) u' + u/2`` away from the jump."""
        if r is None:
            r = self.r_grid[np.abs(self.r_grid - self.center) > 1e-12]
        v, d1, d2 = self.evaluate(r, order=2)
        t1, t2, t3 = d2, (1.0 / r - 0.5 * r) * d1, 0.5 * v
        scale = np.abs(t1) + np.abs(t2) + np.abs(t3)
        return float(np.max(np.abs(t1 + t2 + t3) / scale))

    def __add__(self, other: "RadialProfile") -> "RadialProfile":
        if self.center != other.center:
            raise ValueError("profiles must share the jump radius")
        ci = (self.coef_in[0] + other.coef_in[0], self.coef_in[1] + other.coef_in[1])
        co = (self.coef_out[0] + other.coef_out[0], self.coef_out[1] + other.coef_out[1])
        return RadialProfile.from_coefficients(self.center, ci, co)

    def scaled(self, c: float) -> "RadialProfile":
        return RadialProfile.from_coefficients(
            self.center,
            (c * self.coef_in[0], c * self.coef_in[1]),
            (c * self.coef_out[0], c * self.coef_out[1]),
            self.r_grid,
        )

    def to_csv(self, path) -> None:
        """Write columns ``r, value, deriv``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "value", "deriv"])
            for row in zip(self.r_grid, self.value, self.deriv):
                w.writerow([repr(float(t)) for t in row])


def _check_center(r_bar: float) -> None:
    rt = find_roots()
    if not (rt.r_u < r_bar < rt.r_m):
        raise ValueError(f"r_bar={r_bar} outside (r_u, r_m)")


def avg_profile(r_bar: float, m: int) -> RadialProfile:
    """Average of the unit-strength LD solution with ``m`` points on ``r_bar``.

    Proportional to ``phi_m`` inside and ``phi_u`` outside, continuous with
    value ``phi_1 e^{r_bar^2/8}`` at the jump, where the r-derivative jumps by
    ``m e^{r_bar^2/8} / r_bar``.
    """
    _check_center(r_bar)
    if m < 2:
        raise ValueError("m must be at least 2")
    (m0, _), (u0, _) = basis0(r_bar)
    level = phi_one(r_bar, m) * math.exp(r_bar * r_bar / 8.0)
    return RadialProfile.from_coefficients(r_bar, (level / m0, 0.0), (0.0, level / u0))


def _coefficients_for(value: float, deriv: float, r_bar: float) -> tuple[float, float]:
    """Coefficients of ``alpha phi_m + beta phi_u`` with given data at ``r_bar``."""
    (m0, m1), (u0, u1) = basis0(r_bar)
    w = math.exp(0.25 * r_bar * r_bar) / (SQRT_PI * r_bar)
    alpha = (value * u1 - deriv * u0) / w
    beta = (deriv * m0 - value * m1) / w
    return float(alpha), float(beta)


def _weighted_data(a: float, b: float, r_bar: float) -> tuple[float, float]:
    # u(r_bar) = e^{r^2/8} a and u' - (r/4) u = e^{r^2/8} b
    e = math.exp(r_bar * r_bar / 8.0)
    return e * a, e * (b + 0.25 * r_bar * a)


def solve_phibar(a: float, b: float, r_bar: float) -> RadialProfile:
    """Smooth radial solution with weighted data ``(a, b)`` at ``r_bar``.

    The weighted derivative is ``u' + u * d(omega)/dr`` with
    ``omega = -r^2/8``.
    """
    _check_center(r_bar)
    coef = _coefficients_for(*_weighted_data(a, b, r_bar), r_bar)
    return RadialProfile.from_coefficients(r_bar, coef, coef)


def solve_jbar(c: float, r_bar: float) -> RadialProfile:
    """Radial solution vanishing at ``r_bar`` with weighted slopes ``+-c e^{r_bar^2/8}``."""
    _check_center(r_bar)
    c_out = _coefficients_for(*_weighted_data(0.0, c, r_bar), r_bar)
    c_in = _coefficients_for(*_weighted_data(0.0, -c, r_bar), r_bar)
    return RadialProfile.from_coefficients(r_bar, c_in, c_out)
