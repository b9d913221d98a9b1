"""Linearised doubling (LD) solutions on the plane.

An LD solution solves ``L u = Delta u - (x . grad u)/2 + u/2 = 0`` away from
a dihedrally symmetric set of points, with logarithmic singularities of
prescribed strength there.  For ``m`` points equally spaced on a circle of
radius ``r_bar`` and unit strength the solution is written per angular
frequency ``k = n m``:

* ``n = 0`` is the closed-form average of :func:`shrinkstack.rld.avg_profile`;
* for ``n >= 1`` the radial factor is ``P_k(r) = r^k M((k-1)/2, k+1, r^2/4)``
  inside ``r_bar`` and ``Q_k(r) = r^k U((k-1)/2, k+1, r^2/4)`` outside, with
  the derivative jump fixed by the Fourier density of the point masses.

With ``u = e^omega Phi`` and ``omega = -r^2/8`` the singular content is the
harmonic function ``log|z^m - a^m|``, whose Fourier coefficients are known
exactly.  Near ``r_bar`` we therefore evaluate

    u = sum_p log|z - p| - m log max(r, r_bar) + e^omega avg
        + sum_n d_n(r) cos(n m (theta - theta0)),

where ``d_n`` is the (rapidly decaying) difference between the LD mode and
the mode of the logarithm.  Far from ``r_bar`` the plain mode sum converges
geometrically and is used directly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import rld

__all__ = [
    "Psi",
    "cutoff",
    "cutoff_derivatives",
    "SingularLattice",
    "LdSolution",
    "AffineMismatch",
    "build_ld",
    "eval_ld",
    "eval_xy",
    "eval_regular",
    "green_cyl",
    "cylinder_limit_error",
    "extract_affine",
    "affine_exact",
    "obstruction_fns",
    "Obstruction",
    "delta_of",
    "jacobi_operator_fd",
]

_GL_X, _GL_W = leggauss(256)
DEFAULT_N_MODES = 24


# ---------------------------------------------------------------------------
# cutoff functions
# ---------------------------------------------------------------------------


def Psi(t):
    """Smooth step: 0 for ``t <= -1``, 1 for ``t >= 1``, ``Psi(-t) = 1 - Psi(t)``."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    inner = np.abs(t) < 1.0
    ti = np.where(inner, t, 0.0)
    with np.errstate(over="ignore", divide="ignore"):
        q = -1.0 / (1.0 - ti) + 1.0 / (1.0 + ti)
        val = 1.0 / (1.0 + np.exp(q))
    out = np.where(inner, val, out)
    return out if out.ndim else float(out)


def _psi_derivs(t):
    """``Psi`` and its first two derivatives."""
    t = np.asarray(t, dtype=float)
    inner = np.abs(t) < 1.0
    ti = np.where(inner, t, 0.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        q = -1.0 / (1.0 - ti) + 1.0 / (1.0 + ti)
        q1 = -1.0 / (1.0 - ti) ** 2 - 1.0 / (1.0 + ti) ** 2
        q2 = -2.0 / (1.0 - ti) ** 3 + 2.0 / (1.0 + ti) ** 3
        p = 1.0 / (1.0 + np.exp(q))
        s = p * (1.0 - p)
        d1 = -s * q1
        d2 = -s * q2 - (1.0 - 2.0 * p) * d1 * q1
    p0 = np.where(inner, p, np.where(t >= 1.0, 1.0, 0.0))
    d1 = np.where(inner, np.nan_to_num(d1), 0.0)
    d2 = np.where(inner, np.nan_to_num(d2), 0.0)
    return p0, d1, d2


def cutoff(a: float, b: float, t):
    """``psi_cut[a, b](t)``: 0 near ``a``, 1 near ``b``.

    The affine map sends ``a`` to -3 and ``b`` to 3.

    Raises
    ------
    ValueError
        If ``a == b``.
    """
    if a == b:
        raise ValueError("cutoff needs a != b")
    t = np.asarray(t, dtype=float)
    return Psi(-3.0 + 6.0 * (t - a) / (b - a))


def cutoff_derivatives(a: float, b: float, t):
    """``psi_cut[a, b]`` with first and second t-derivatives."""
    if a == b:
        raise ValueError("cutoff needs a != b")
    s = 6.0 / (b - a)
    p, d1, d2 = _psi_derivs(-3.0 + s * (np.asarray(t, dtype=float) - a))
    return p, s * d1, s * s * d2


def delta_of(m: int) -> float:
    """Obstruction scale ``1/(100 m)``."""
    return 1.0 / (100.0 * m)


# ---------------------------------------------------------------------------
# lattices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingularLattice:
    """``m`` points on the circle of radius ``r_bar``.

    Family 0 starts at angle 0, family 1 at angle ``pi / m``.
    """

    family: int
    r_bar: float
    m: int

    def __post_init__(self):
        if self.family not in (0, 1):
            raise ValueError("family must be 0 or 1")
        if self.m < 2:
            raise ValueError("m must be at least 2")

    @property
    def theta0(self) -> float:
        return 0.0 if self.family == 0 else math.pi / self.m

    def angles(self) -> np.ndarray:
        return self.theta0 + 2.0 * math.pi * np.arange(self.m) / self.m

    def points(self) -> np.ndarray:
        th = self.angles()
        return self.r_bar * np.column_stack([np.cos(th), np.sin(th)])

    def check_admissible(self) -> None:
        lo, hi = rld.admissible_window()
        if not (lo < self.r_bar < hi):
            raise ValueError(f"r_bar={self.r_bar} outside the admissible window ({lo}, {hi})")


# ---------------------------------------------------------------------------
# radial mode functions
# ---------------------------------------------------------------------------


def _log_integral(p: np.ndarray, beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``log int_0^inf 2 v^p (x + v^2)^beta e^{-v^2} dv`` on a (x, mode) grid.

    Gauss-Legendre with 256 nodes on a window of about 12 Laplace widths
    around the integrand peak; the integrand is analytic in ``v`` for
    integer ``p >= 0``.
    """
    X = x[:, None]
    P = p[None, :]
    B = beta[None, :]
    a = 0.5 * P  # u^a with u = v^2 ignoring the Jacobian
    s = X - a - B
    u_star = 0.5 * (-s + np.sqrt(s * s + 4.0 * a * X))
    u_star = np.maximum(u_star, 0.0)
    v_star = np.sqrt(u_star)
    with np.errstate(divide="ignore", invalid="ignore"):
        curv = (
            np.where(v_star > 0, P / np.where(v_star > 0, v_star, 1.0) ** 2, 0.0)
            - 2.0 * B * (X - u_star) / (X + u_star) ** 2
            + 2.0
        )
    sigma = 1.0 / np.sqrt(np.maximum(curv, 0.05))
    lo = np.maximum(v_star - 12.0 * sigma, 0.0)
    hi = v_star + 12.0 * sigma + 1.0
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    v = mid[..., None] + half[..., None] * _GL_X  # (nx, nk, nodes)
    with np.errstate(divide="ignore"):
        logg = P[..., None] * np.log(v) + B[..., None] * np.log(X[..., None] + v * v) - v * v
    logg = np.where(v > 0, logg, np.where(P[..., None] == 0, B[..., None] * np.log(X[..., None]), -np.inf))
    shift = np.max(logg, axis=-1, keepdims=True)
    total = np.sum(_GL_W * np.exp(logg - shift), axis=-1)
    return np.log(2.0 * half * total) + shift[..., 0]


def _log_kummer_small(a: np.ndarray, b: np.ndarray, x: np.ndarray, terms: int = 60) -> np.ndarray:
    """``log M(a, b, x)`` for positive a, b and moderate x, on a (x, mode) grid."""
    X = x[:, None]
    term = np.ones((x.size, a.size))
    total = np.ones_like(term)
    for j in range(terms):
        term = term * (a + j) / (b + j) * X / (j + 1)
        total = total + term
        if np.all(term < 1e-18 * total):
            break
    return np.log(total)


@dataclass(frozen=True)
class _LatticeModes:
    """Unit-strength LD solution of one lattice, stored as mode data."""

    lattice: SingularLattice
    n_modes: int
    avg: rld.RadialProfile = field(repr=False)
    k: np.ndarray = field(repr=False)
    amp: np.ndarray = field(repr=False)  # A_n = u_n(r_bar)
    log_m_bar: np.ndarray = field(repr=False)
    log_i_bar: np.ndarray = field(repr=False)
    tail: float = 0.0
    tail_coef: float = 0.0
    tail_slope: float = 0.0

    @classmethod
    def build(cls, lat: SingularLattice, n_modes: int) -> "_LatticeModes":
        rb, m = lat.r_bar, lat.m
        n = np.arange(1, n_modes + 2, dtype=float)  # one extra for the tail estimate
        k = n * m
        a, b = 0.5 * (k - 1.0), k + 1.0
        xb = np.array([0.25 * rb * rb])
        log_m = _log_kummer_small(a, b, xb)[0]
        log_m1 = _log_kummer_small(a + 1.0, b + 1.0, xb)[0]
        lp = k / rb + 0.5 * rb * (a / b) * np.exp(log_m1 - log_m)
        beta = 0.5 * (k + 1.0)
        log_i = _log_integral(k - 2.0, beta, xb)[0]
        log_i1 = _log_integral(k - 2.0, beta - 1.0, xb)[0]
        lq = -k / rb + 0.5 * rb * beta * np.exp(log_i1 - log_i)
        amp = -(2.0 * m / rb) / (lp - lq)
        # the last mode is kept only to fit the tail law d_n ~ c / n^3
        tail_coef = (amp[-2] + 1.0 / n[-2]) * n[-2] ** 3
        tail = abs(tail_coef / n[-1] ** 3 - (amp[-1] + 1.0 / n[-1]))
        # r-derivative of d_n at r_bar (equal on both sides) decays like e / n^3
        deriv = k[-2] / rb * (amp[-2] + 1.0 / n[-2]) + amp[-2] * (lp[-2] - k[-2] / rb - rb / 4.0)
        tail_slope = deriv * n[-2] ** 3
        return cls(
            lattice=lat,
            n_modes=n_modes,
            avg=rld.avg_profile(rb, m),
            k=k[:-1],
            amp=amp[:-1],
            log_m_bar=log_m[:-1],
            log_i_bar=log_i[:-1],
            tail=float(tail),
            tail_coef=float(tail_coef),
            tail_slope=float(tail_slope),
        )

    # -- radial factors -------------------------------------------------
    def _radial(self, r: np.ndarray) -> np.ndarray:
        """``q_n(r)``: mode profile of ``u`` divided by ``A_n rho^k``.

        ``u_n(r) = A_n rho^k q_n(r)`` with ``rho = min(r/rb, rb/r)``.
        """
        rb = self.lattice.r_bar
        k = self.k
        a, b = 0.5 * (k - 1.0), k + 1.0
        x = 0.25 * r * r
        dw = -(r * r - rb * rb) / 8.0
        out = np.empty((r.size, k.size))
        inside = r <= rb
        if np.any(inside):
            lm = _log_kummer_small(a, b, x[inside])
            out[inside] = np.exp(dw[inside, None] + lm - self.log_m_bar)
        if np.any(~inside):
            li = _log_integral(k - 2.0, 0.5 * (k + 1.0), x[~inside])
            out[~inside] = np.exp(dw[~inside, None] + li - self.log_i_bar)
        return out

    def near_band(self, r: np.ndarray) -> np.ndarray:
        """Radii where the subtracted (split) form is used."""
        thresh = 36.0 / (self.lattice.m * (self.n_modes + 1))
        with np.errstate(divide="ignore"):
            return np.abs(np.log(r / self.lattice.r_bar)) <= thresh

    # -- evaluation ------------------------------------------------------
    def weighted(self, xy: np.ndarray, drop: Optional[int] = None) -> np.ndarray:
        """``u = e^omega Phi`` at points in the near band.

        If ``drop`` is given, ``log|z - p_drop|`` is removed from the sum.
        """
        lat = self.lattice
        rb, m = lat.r_bar, lat.m
        r = np.hypot(xy[:, 0], xy[:, 1])
        th = np.arctan2(xy[:, 1], xy[:, 0])
        pts = lat.points()
        diff = xy[:, None, :] - pts[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        if drop is not None:
            dist[:, drop] = 1.0
        with np.errstate(divide="ignore"):
            logs = np.sum(np.log(dist), axis=1)
        s = logs - m * np.log(np.maximum(r, rb))
        avg = self.avg.evaluate(r)[0]
        u = s + np.exp(-r * r / 8.0) * avg
        rho = np.minimum(r / rb, rb / r)
        n = self.k / m
        q = self._radial(r)
        with np.errstate(divide="ignore", under="ignore"):
            rho_k = np.exp(self.k[None, :] * np.log(rho)[:, None])
        d = rho_k * (self.amp[None, :] * q + 1.0 / n[None, :])
        cosines = np.cos(self.k[None, :] * (th - lat.theta0)[:, None])
        return u + np.sum(d * cosines, axis=1) + self._tail(r, th)

    def _tail(self, r: np.ndarray, th: np.ndarray, extra: int = 4000) -> np.ndarray:
        """Modes past ``n_modes`` from the fitted law.

        ``d_n(r) ~ rho^k (c / n^3 + (r - r_bar)(-+ m c / (r_bar n^2) + e / n^3))``
        where the ``1/n^2`` term cancels the slope of ``rho^k`` at ``r_bar``
        and ``c, e`` are fitted from the last computed mode.
        """
        lat = self.lattice
        rb = lat.r_bar
        out3 = np.zeros(r.size)
        out2 = np.zeros(r.size)
        log_rho = -np.abs(np.log(r / rb))
        for start in range(0, extra, 500):
            n = self.n_modes + 1 + start + np.arange(500, dtype=float)
            with np.errstate(under="ignore"):
                w = np.exp(lat.m * n[None, :] * log_rho[:, None])
            if not np.any(w > 1e-18):
                break
            c = w * np.cos(lat.m * n[None, :] * (th - lat.theta0)[:, None])
            out3 += np.sum(c / n**3, axis=1)
            out2 += np.sum(c / n**2, axis=1)
        c = self.tail_coef
        g = np.where(r <= rb, -lat.m * c / rb, lat.m * c / rb)
        return c * out3 + (r - rb) * (g * out2 + self.tail_slope * out3)

    def direct(self, xy: np.ndarray) -> np.ndarray:
        """``Phi`` by the plain mode sum (accurate away from the circle)."""
        lat = self.lattice
        rb = lat.r_bar
        r = np.hypot(xy[:, 0], xy[:, 1])
        th = np.arctan2(xy[:, 1], xy[:, 0])
        avg = self.avg.evaluate(r)[0]
        with np.errstate(divide="ignore"):
            rho = np.minimum(r / rb, rb / r)
        q = self._radial(np.maximum(r, 1e-300))
        with np.errstate(divide="ignore", under="ignore", over="ignore"):
            log_mag = self.k[None, :] * np.log(rho)[:, None] + np.log(q) + (r * r / 8.0)[:, None]
            terms = self.amp[None, :] * np.exp(log_mag)
        terms = np.where(np.isfinite(terms), terms, 0.0)
        cosines = np.cos(self.k[None, :] * (th - lat.theta0)[:, None])
        return avg + np.sum(terms * cosines, axis=1)

    def value(self, xy: np.ndarray) -> np.ndarray:
        r = np.hypot(xy[:, 0], xy[:, 1])
        near = self.near_band(r)
        out = np.empty(r.size)
        if np.any(near):
            out[near] = np.exp(r[near] ** 2 / 8.0) * self.weighted(xy[near])
        if np.any(~near):
            out[~near] = self.direct(xy[~near])
        return out

    def mode_magnitudes(self, r: float) -> np.ndarray:
        """``|A_n| e^{-omega} rho^k q_n(r)``, the size of each mode at radius ``r``."""
        rb = self.lattice.r_bar
        rho = min(r / rb, rb / r)
        q = self._radial(np.array([float(r)]))[0]
        with np.errstate(under="ignore"):
            return np.abs(self.amp) * np.exp(self.k * math.log(rho) + r * r / 8.0) * q

    def truncation_bound(self, r: float) -> float:
        """Bound on the neglected modes at radius ``r`` (geometric tail)."""
        mags = self.mode_magnitudes(r)
        ratio = mags[-1] / mags[-2] if mags[-2] > 0 else 0.0
        if ratio >= 1.0:
            return math.inf
        return float(mags[-1] * ratio / (1.0 - ratio))


# ---------------------------------------------------------------------------
# LD solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LdSolution:
    """``tau_plus Phi[L_plus] - tau_minus Phi[L_minus]``.

    Attributes
    ----------
    lattice_plus, lattice_minus : SingularLattice or None
    tau_plus, tau_minus : float
    n_modes : int
    """

    lattice_plus: Optional[SingularLattice]
    lattice_minus: Optional[SingularLattice]
    tau_plus: float
    tau_minus: float
    n_modes: int
    parts: tuple = field(repr=False, default=())

    @property
    def m(self) -> int:
        lat = self.lattice_plus or self.lattice_minus
        return lat.m

    def signed_parts(self):
        """Yield ``(sign, tau, modes)`` for each present lattice."""
        for sign, tau, mod in self.parts:
            yield sign, tau, mod

    @property
    def tail_estimate(self) -> float:
        return max((mod.tail for _, _, mod in self.parts), default=0.0)

    def avg(self, r):
        """Circular average ``tau_+ avg_+ - tau_- avg_-``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for sign, tau, mod in self.parts:
            out = out + sign * tau * mod.avg.evaluate(r)[0]
        return out

    def mode_table(self):
        """Rows ``(lattice sign, n, k, A_n)``."""
        rows = []
        for sign, _, mod in self.parts:
            for i, (k, a) in enumerate(zip(mod.k, mod.amp)):
                rows.append((sign, i + 1, int(k), float(a)))
        return rows

    def mode_table_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sign", "n", "k", "amplitude"])
            for row in self.mode_table():
                w.writerow([row[0], row[1], row[2], repr(row[3])])


def build_ld(
    lat_plus: Optional[SingularLattice],
    lat_minus: Optional[SingularLattice],
    tau_plus: float,
    tau_minus: float,
    n_modes: int = DEFAULT_N_MODES,
) -> LdSolution:
    """Assemble an LD solution from one or two lattices.

    Parameters
    ----------
    lat_plus, lat_minus : SingularLattice or None
        Positive and negative singular sets; at least one is required.
    tau_plus, tau_minus : float
        Non-negative strengths.
    n_modes : int
        Number of nonzero angular frequencies ``m, 2m, ...`` kept.
    """
    if lat_plus is None and lat_minus is None:
        raise ValueError("at least one lattice is required")
    if tau_plus < 0 or tau_minus < 0:
        raise ValueError("strengths must be non-negative")
    if n_modes < 8:
        raise ValueError("n_modes must be at least 8")
    parts = []
    for sign, lat, tau in ((1.0, lat_plus, tau_plus), (-1.0, lat_minus, tau_minus)):
        if lat is not None:
            mod = _LatticeModes.build(lat, n_modes)
            parts.append((sign, float(tau), mod))
    sol = LdSolution(lat_plus, lat_minus, float(tau_plus), float(tau_minus), n_modes, tuple(parts))
    if sol.tail_estimate > 1e-8:
        warnings.warn(f"mode tail estimate {sol.tail_estimate:.2e} exceeds 1e-8", RuntimeWarning)
    return sol


def _as_points(x, y) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    return np.column_stack([x.ravel(), y.ravel()]), x.shape


def eval_xy(sol: LdSolution, x, y) -> np.ndarray:
    """Evaluate an LD solution at Cartesian points.

    Raises
    ------
    ValueError
        If a point lies within 1e-8 of a singular point.
    """
    xy, shape = _as_points(x, y)
    out = np.zeros(xy.shape[0])
    for sign, tau, mod in sol.parts:
        pts = mod.lattice.points()
        dmin = np.min(np.hypot(xy[:, None, 0] - pts[None, :, 0], xy[:, None, 1] - pts[None, :, 1]), axis=1)
        if np.any(dmin < 1e-8):
            raise ValueError("evaluation at a singular point requires subtraction")
        if tau != 0.0:
            out += sign * tau * mod.value(xy)
    return out.reshape(shape)


def eval_ld(sol: LdSolution, r, theta, subtract_singularity_at: Optional[tuple] = None) -> np.ndarray:
    """Evaluate an LD solution in polar coordinates.

    Parameters
    ----------
    sol : LdSolution
    r, theta : array_like
    subtract_singularity_at : tuple (side, index), optional
        If given, return the weighted regular part
        ``e^omega value -+ tau log d^{g_Shr}_p`` at the singular point ``p``
        with the given index in the ``"plus"`` or ``"minus"`` lattice.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x, y = r * np.cos(theta), r * np.sin(theta)
    if subtract_singularity_at is None:
        return eval_xy(sol, x, y)
    side, index = subtract_singularity_at
    return eval_regular(sol, side, index, x, y)


def _which(sol: LdSolution, side: str):
    for sign, tau, mod in sol.parts:
        if (side == "plus" and sign > 0) or (side == "minus" and sign < 0):
            return sign, tau, mod
    raise ValueError(f"solution has no {side} lattice")


def _log_dist_shr(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Second-order model of ``log d^{g_Shr}_p(q)``.

    ``log|q - p| + omega(p) + d omega_p(q - p) / 2`` with ``omega = -|x|^2/8``.
    """
    v = q - p[None, :]
    wp = -float(p @ p) / 8.0
    dw = -0.25 * p
    with np.errstate(divide="ignore"):
        return np.log(np.hypot(v[:, 0], v[:, 1])) + wp + 0.5 * (v @ dw)


def eval_regular(sol: LdSolution, side: str, index: int, x, y) -> np.ndarray:
    """Weighted regular part ``e^omega phi -+ tau log d^{g_Shr}_p`` near ``p``.

    Parameters
    ----------
    side : {"plus", "minus"}
        Lattice containing ``p``.
    index : int
        Index of ``p`` within its lattice.
    """
    xy, shape = _as_points(x, y)
    sign_p, tau_p, mod_p = _which(sol, side)
    p = mod_p.lattice.points()[index]
    r = np.hypot(xy[:, 0], xy[:, 1])
    w = np.exp(-r * r / 8.0)
    out = np.zeros(xy.shape[0])
    for sign, tau, mod in sol.parts:
        if mod is mod_p:
            u = mod.weighted(xy, drop=index)
            # the model log distance differs from log|q - p| by an affine term
            v = xy - p[None, :]
            corr = -float(p @ p) / 8.0 + 0.5 * (v @ (-0.25 * p))
            out += sign * tau * (u - corr)
        else:
            out += sign * tau * w * mod.value(xy)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# affine mismatch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineMismatch:
    """Per-strength mismatch at one singular point.

    Attributes
    ----------
    mu : float
        Constant part.
    mu_prime : float
        Coefficient of ``dr``.
    point : ndarray
    h_used, tau_used : float
    theta_component : float
        Coefficient of the unit angular direction (zero by symmetry).
    """

    mu: float
    mu_prime: float
    point: np.ndarray = field(repr=False)
    h_used: float = 0.0
    tau_used: float = 0.0
    theta_component: float = 0.0


def _circle_fit(f, p: np.ndarray, eps: float, n: int = 16):
    t = 2.0 * math.pi * np.arange(n) / n
    q = p[None, :] + eps * np.column_stack([np.cos(t), np.sin(t)])
    v = f(q)
    c0 = float(np.mean(v))
    gx = float(2.0 / (n * eps) * np.sum(v * np.cos(t)))
    gy = float(2.0 / (n * eps) * np.sum(v * np.sin(t)))
    return np.array([c0, gx, gy])


def _to_mismatch(fit, p, side, tau, h) -> AffineMismatch:
    sgn = 1.0 if side == "plus" else -1.0
    er = p / np.hypot(*p)
    et = np.array([-er[1], er[0]])
    grad = fit[1:]
    mu = (fit[0] + sgn * tau * math.log(tau / 2.0) - h) / tau
    return AffineMismatch(
        mu=float(mu),
        mu_prime=float(grad @ er / tau),
        point=p,
        h_used=float(h),
        tau_used=float(tau),
        theta_component=float(grad @ et / tau),
    )


def extract_affine(
    sol: LdSolution,
    side: str,
    index: int,
    h: float,
    eps: Optional[float] = None,
    theta_tol: float = 1e-6,
) -> AffineMismatch:
    """Mismatch of ``sol`` at one singular point.

    The affine part of the weighted regular part is fitted by 16-point
    trigonometric quadrature on circles of radius ``eps`` and ``eps/2``
    followed by Richardson extrapolation.

    Raises
    ------
    ArithmeticError
        If the angular gradient component exceeds ``theta_tol``, which would
        contradict the reflection symmetry through ``p``.
    """
    _, tau, mod = _which(sol, side)
    m = mod.lattice.m
    if eps is None:
        eps = min(delta_of(m) / 4.0, 0.3 / m)
    p = mod.lattice.points()[index]

    def f(q):
        return eval_regular(sol, side, index, q[:, 0], q[:, 1])

    a1 = _circle_fit(f, p, eps)
    a2 = _circle_fit(f, p, eps / 2.0)
    fit = (4.0 * a2 - a1) / 3.0
    out = _to_mismatch(fit, p, side, tau, h)
    if abs(out.theta_component) > theta_tol * max(1.0, abs(out.mu_prime)):
        raise ArithmeticError(f"angular component {out.theta_component:.3e} violates symmetry")
    return out


def affine_exact(sol: LdSolution, side: str, index: int, h: float, step: float = 1e-5) -> AffineMismatch:
    """Oracle for :func:`extract_affine`.

    The value at ``p`` is evaluated directly (the regular part is finite
    there); the gradient uses a fourth-order central difference.
    """
    _, tau, mod = _which(sol, side)
    p = mod.lattice.points()[index]

    def f(q):
        return eval_regular(sol, side, index, q[:, 0], q[:, 1])

    c0 = float(f(p[None, :])[0])
    grad = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        pts = np.array([p - 2 * e, p - e, p + e, p + 2 * e])
        v = f(pts)
        grad[i] = (v[0] - 8 * v[1] + 8 * v[2] - v[3]) / (12 * step)
    return _to_mismatch(np.array([c0, *grad]), p, side, tau, h)


# ---------------------------------------------------------------------------
# cylinder Green's function
# ---------------------------------------------------------------------------


def green_cyl(s_hat, theta_t):
    """``1/2 log(4 sin^2(theta/2) + 4 sinh^2(s/2))``.

    Raises
    ------
    ValueError
        At the singular points ``(0, 2 pi k)``.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    theta_t = np.asarray(theta_t, dtype=float)
    arg = 4.0 * np.sin(0.5 * theta_t) ** 2 + 4.0 * np.sinh(0.5 * s_hat) ** 2
    if np.any(arg == 0.0):
        raise ValueError("green_cyl is singular at (0, 2 pi k)")
    out = 0.5 * np.log(arg)
    return out if out.ndim else float(out)


def cylinder_limit_error(m: int, r_bar: Optional[float] = None, n_rad: int = 16, n_ang: int = 48) -> float:
    """Sup distance of the rescaled LD solution from :func:`green_cyl`.

    About the singular point ``(r_bar, 0)`` of a unit-strength family-0
    lattice the rescaled coordinates are ``s_hat = m log(r / r_bar)`` and
    ``theta_t = m theta``.  The compared quantity is
    ``e^omega (Phi - phibar[phi_1, m h_hat(r_bar)])`` on the annulus
    ``0.5 <= |(s_hat, theta_t)| <= 2``.
    """
    if r_bar is None:
        r_bar = rld.find_roots().r_mu
    sol = build_ld(SingularLattice(0, r_bar, m), None, 1.0, 0.0)
    smooth = rld.solve_phibar(rld.phi_one(r_bar, m), m * rld.h_hat(r_bar), r_bar)
    rad = np.linspace(0.5, 2.0, n_rad)
    ang = np.linspace(0.0, 2.0 * math.pi, n_ang, endpoint=False)
    R, A = np.meshgrid(rad, ang)
    s_hat, theta_t = (R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()
    r = r_bar * np.exp(s_hat / m)
    w = np.exp(-r * r / 8.0)
    val = w * (eval_ld(sol, r, theta_t / m) - smooth.evaluate(r)[0])
    return float(np.max(np.abs(val - green_cyl(s_hat, theta_t))))


# ---------------------------------------------------------------------------
# obstruction functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Obstruction:
    """Localised obstruction functions of one lattice.

    ``V = psi phibar[1, 0]`` and ``V' = psi phibar[0, 1]`` with the cutoff
    ``psi`` equal to 1 on ``d <= delta`` and 0 on ``d >= 2 delta``;
    ``W = L V`` and ``W' = L V'`` are computed from the product rule.
    """

    lattice: SingularLattice
    delta: float
    phibar0: rld.RadialProfile = field(repr=False)
    phibar1: rld.RadialProfile = field(repr=False)

    def _nearest(self, xy):
        pts = self.lattice.points()
        diff = xy[:, None, :] - pts[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        i = np.argmin(d, axis=1)
        return d[np.arange(xy.shape[0]), i], pts[i]

    def _cut(self, xy):
        d, p = self._nearest(xy)
        psi, d1, d2 = cutoff_derivatives(2.0 * self.delta, self.delta, d)
        return d, p, psi, d1, d2

    def _V(self, prof, x, y):
        xy, shape = _as_points(x, y)
        d, _, psi, _, _ = self._cut(xy)
        r = np.hypot(xy[:, 0], xy[:, 1])
        val = np.where(psi > 0, psi * prof.evaluate(r)[0], 0.0)
        return val.reshape(shape)

    def _W(self, prof, x, y):
        xy, shape = _as_points(x, y)
        d, p, psi, d1, d2 = self._cut(xy)
        r = np.hypot(xy[:, 0], xy[:, 1])
        f, f1 = prof.evaluate(r)[:2]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = (xy - p) / d[:, None]
            lap_psi = d2 + d1 / d
            grad_psi = d1[:, None] * unit
            grad_f = (f1 / r)[:, None] * xy
        x_dot = np.sum(xy * grad_psi, axis=1)
        val = f * (lap_psi - 0.5 * x_dot) + 2.0 * np.sum(grad_psi * grad_f, axis=1)
        val = np.where((d1 != 0.0) | (d2 != 0.0), val, 0.0)
        return np.nan_to_num(val).reshape(shape)

    def V(self, x, y):
        return self._V(self.phibar0, x, y)

    def V_prime(self, x, y):
        return self._V(self.phibar1, x, y)

    def W(self, x, y):
        return self._W(self.phibar0, x, y)

    def W_prime(self, x, y):
        return self._W(self.phibar1, x, y)


def obstruction_fns(lat: SingularLattice) -> Obstruction:
    """Build ``V, V', W, W'`` for a lattice with ``delta = 1/(100 m)``."""
    return Obstruction(
        lattice=lat,
        delta=delta_of(lat.m),
        phibar0=rld.solve_phibar(1.0, 0.0, lat.r_bar),
        phibar1=rld.solve_phibar(0.0, 1.0, lat.r_bar),
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def jacobi_operator_fd(f, x: np.ndarray, y: np.ndarray, h: float = 1e-3):
    """``L f = Delta f - (x . grad f)/2 + f/2`` by fourth-order differences.

    Returns the value of ``L f`` and a local scale (sum of the absolute
    values of the three terms) for relative comparisons.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    offs = np.array([-2, -1, 0, 1, 2]) * h
    fx = [f(x + o, y) for o in offs]
    fy = [f(x, y + o) for o in offs]
    f0 = fx[2]
    dx = sum(ci * v for ci, v in zip(c, fx)) / h
    dy = sum(ci * v for ci, v in zip(c, fy)) / h
    dxx = sum(ci * v for ci, v in zip(c2, fx)) / h**2
    dyy = sum(ci * v for ci, v in zip(c2, fy)) / h**2
    lap = dxx + dyy
    drift = -0.5 * (x * dx + y * dy)
    return lap + drift + 0.5 * f0, np.abs(lap) + np.abs(drift) + 0.5 * np.abs(f0)
