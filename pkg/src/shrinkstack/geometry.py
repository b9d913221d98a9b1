"""Ambient geometry of the initial surface.

The ambient space is ``R^3`` with the Gaussian metric
``g_Shr = e^{2 omega} g_Euc``, ``omega = -|x|^2/8``.  The horizontal plane
``z = 0`` is totally geodesic for ``g_Shr``.  This module provides

* the Fermi exponential map of the plane (an in-plane geodesic followed by a
  normal geodesic, both integrated with classical Runge-Kutta);
* tilted catenoidal bridges pushed through the Fermi map, and the inversion
  of a bridge sheet as a graph over the plane;
* the graph functions ``phi_gl_j`` of the levels of the initial surface;
* the weighted mean curvature ``H + X.nu/2`` of parametrised patches by
  Richardson-extrapolated central differences, in double precision or with
  mpmath when the bridge waist is far below double resolution;
* residual and cone-slope reports.

Mesh generation lives in :mod:`shrinkstack.mesh`.

Conventions: the model coordinates of a bridge at ``p`` are Cartesian for
``g_Shr`` restricted to ``p``, along ``(e_r(p), e_theta(p), e_z)``.  A
model vector ``v`` therefore has Euclidean components ``e^{-omega(p)} v``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import mpmath
import numpy as np

from . import balance, ld, rld
from .specfun import kummer_m_half

__all__ = [
    "gaussian_weight",
    "fermi_map",
    "fermi_displacement",
    "fermi_speed_drift",
    "normal_geodesic_defect",
    "plane_log",
    "BridgeSpec",
    "catenoid_model",
    "catenoid_point",
    "catenoid_point_mp",
    "catenoid_graph",
    "weighted_mean_curvature",
    "weighted_mean_curvature_mp",
    "graph_patch",
    "SurfaceData",
    "prepare_surface",
    "graph_phi_gl",
    "ordering_gaps",
    "cone_slopes",
    "residual_report",
    "DEFAULT_R_OUT",
    "DEFAULT_B",
    "FERMI_STEPS",
]

DEFAULT_R_OUT = 30.0
DEFAULT_B = 10.0
FERMI_STEPS = 64


# ---------------------------------------------------------------------------
# weight
# ---------------------------------------------------------------------------


def gaussian_weight(pt):
    """``omega = -|pt|^2/8`` and its gradient ``-pt/4``.

    Parameters
    ----------
    pt : array_like, shape (..., 3) or (..., 2)

    Returns
    -------
    omega : ndarray or float
    grad : ndarray
    """
    pt = np.asarray(pt, dtype=float)
    w = -0.125 * np.sum(pt * pt, axis=-1)
    return (float(w) if w.ndim == 0 else w), -0.25 * pt


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------
# The routines below take lists of three components.  A component may be a
# float, an mpmath number or a numpy array (vectorised over points); only
# arithmetic is used, so one implementation serves all three.


def _exp(x):
    if isinstance(x, mpmath.mpf):
        return mpmath.exp(x)
    return np.exp(x)


def _sqrt(x):
    if isinstance(x, mpmath.mpf):
        return mpmath.sqrt(x)
    return np.sqrt(x)


def _accel(base, d, v):
    """``x'' = |x'|^2 grad omega - 2 (grad omega . x') x'`` at ``base + d``."""
    g = [-(base[i] + d[i]) / 4 for i in range(3)]
    gv = g[0] * v[0] + g[1] * v[1] + g[2] * v[2]
    vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    return [vv * g[i] - 2 * gv * v[i] for i in range(3)]


def _geodesic(base, d, v, steps, one):
    """RK4 over unit parameter time for the displacement ``d`` from ``base``."""
    h = one / steps
    h2 = h / 2
    h6 = h / 6
    for _ in range(steps):
        a1 = _accel(base, d, v)
        d2 = [d[i] + h2 * v[i] for i in range(3)]
        v2 = [v[i] + h2 * a1[i] for i in range(3)]
        a2 = _accel(base, d2, v2)
        d3 = [d[i] + h2 * v2[i] for i in range(3)]
        v3 = [v[i] + h2 * a2[i] for i in range(3)]
        a3 = _accel(base, d3, v3)
        d4 = [d[i] + h * v3[i] for i in range(3)]
        v4 = [v[i] + h * a3[i] for i in range(3)]
        a4 = _accel(base, d4, v4)
        d = [d[i] + h6 * (v[i] + 2 * v2[i] + 2 * v3[i] + v4[i]) for i in range(3)]
        v = [v[i] + h6 * (a1[i] + 2 * a2[i] + 2 * a3[i] + a4[i]) for i in range(3)]
    return d, v


def _shr_speed(base, d, v):
    x2 = sum((base[i] + d[i]) * (base[i] + d[i]) for i in range(3))
    return _exp(-x2 / 8) * _sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def _fermi_core(p0, p1, v0, v1, z, steps, one):
    zero = p0 * 0
    base = [p0, p1, zero]
    ep = _exp((p0 * p0 + p1 * p1) / 8)  # e^{-omega(p)}
    d, vel1 = _geodesic(base, [zero, zero, zero], [ep * v0, ep * v1, zero], steps, one)
    q0, q1 = p0 + d[0], p1 + d[1]
    eq = _exp((q0 * q0 + q1 * q1) / 8)
    d_in = [d[0], d[1], zero]
    d, vel2 = _geodesic(base, d_in, [zero, zero, eq * z], steps, one)
    return d, (d_in, vel1), vel2


MAX_FERMI_STEPS = 4096


def _check_step(p, v, z, steps):
    """Step count for the legs: ``steps``, raised until the guard holds."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    scale = np.exp(np.sum(p * p, axis=-1) / 8.0)
    length = (np.hypot(v[..., 0], v[..., 1]) + np.abs(z)) * scale * np.exp((np.abs(z) + 1.0) ** 2)
    reach = np.max(length * (np.hypot(p[..., 0], p[..., 1]) + 1.0)) if length.size else 0.0
    needed = math.ceil(4.0 * reach) if np.isfinite(reach) else math.inf
    if needed > MAX_FERMI_STEPS:
        raise ValueError("Fermi map step too large; reduce |v| or |z|")
    return max(int(steps), int(needed))


def fermi_displacement(p, v, z, steps: int = FERMI_STEPS) -> np.ndarray:
    """Displacement ``fermi_map(p, v, z) - p`` (vectorised).

    Integrating the displacement instead of the position keeps its relative
    accuracy when ``|v|`` and ``|z|`` are far below ``|p|``.

    Parameters
    ----------
    p : array_like, shape (..., 2)
        Base points in the plane.
    v : array_like, shape (..., 2)
        In-plane tangent vectors in ``g_Shr``-orthonormal components.
    z : array_like, shape (...)
        Signed ``g_Shr`` arclength along the upward normal geodesic.
    steps : int
        Minimum RK4 steps per leg; raised automatically for long legs.

    Raises
    ------
    ValueError
        If a leg would need more than ``MAX_FERMI_STEPS`` steps.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    shape = np.broadcast_shapes(p.shape[:-1], v.shape[:-1], z.shape)
    p = np.broadcast_to(p, shape + (2,))
    v = np.broadcast_to(v, shape + (2,))
    z = np.broadcast_to(z, shape)
    p0, p1, v0, v1 = p[..., 0], p[..., 1], v[..., 0], v[..., 1]
    steps = _check_step(np.stack([p0, p1], -1), np.stack([v0, v1], -1), z, steps)
    d, _, _ = _fermi_core(p0, p1, v0, v1, z, steps, 1.0)
    if not all(np.all(np.isfinite(c)) for c in d):
        raise ValueError("Fermi map integration produced non-finite values")
    return np.stack(d, axis=-1)


def fermi_map(p, v, z, steps: int = FERMI_STEPS) -> np.ndarray:
    """``exp_q(z nu)`` with ``q = exp_p(v)``, both geodesics of ``g_Shr``.

    See :func:`fermi_displacement` for the parameters.

    Returns
    -------
    ndarray, shape (..., 3)
    """
    p = np.asarray(p, dtype=float)
    d = fermi_displacement(p, v, z, steps)
    base = np.zeros(d.shape)
    base[..., :2] = p
    return base + d


def fermi_speed_drift(p, v, z, steps: int = FERMI_STEPS) -> float:
    """Largest relative change of the ``g_Shr`` speed over either leg."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    p0, p1, v0, v1 = p[:, 0], p[:, 1], v[:, 0], v[:, 1]
    zero = p0 * 0
    base = [p0, p1, zero]
    d2, (d1, vel1), vel2 = _fermi_core(p0, p1, v0, v1, z, steps, 1.0)
    s1 = _shr_speed(base, d1, vel1)
    s2 = _shr_speed(base, d2, vel2)
    n1 = np.hypot(v0, v1)
    n2 = np.abs(z)
    out = 0.0
    for s, n in ((s1, n1), (s2, n2)):
        ok = n > 0
        if np.any(ok):
            out = max(out, float(np.max(np.abs(s[ok] - n[ok]) / n[ok])))
    return out


def normal_geodesic_defect(p, s, steps: int = FERMI_STEPS) -> np.ndarray:
    """``e^{omega(p)} Z_s - s`` for the unit-speed normal geodesic from ``p``.

    ``Z_s`` is the height reached after ``g_Shr`` arclength ``s``; the
    defect is cubic in ``s``.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    z = fermi_displacement(p, np.zeros(p.shape), s, steps)[..., 2]
    return np.exp(-np.sum(p * p, axis=-1) / 8.0) * z - s


def plane_log(p, x, steps: int = FERMI_STEPS, tol: float = 1e-14, max_iter: int = 30) -> np.ndarray:
    """Inverse of the in-plane exponential map: ``v`` with ``exp_p(v) = x``.

    Newton iteration with a finite-difference Jacobian; ``|v|`` is the
    ``g_Shr`` distance from ``p`` to ``x``.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    target = x - p
    v = np.exp(-np.sum(p * p, axis=1, keepdims=True) / 8.0) * target
    zero = np.zeros(len(x))
    for _ in range(max_iter):
        f = fermi_displacement(p, v, zero, steps)[:, :2] - target
        scale = np.maximum(np.hypot(*target.T), 1e-300)
        if np.max(np.hypot(*f.T) / scale) < tol:
            return v
        eta = 1e-7 * np.maximum(np.hypot(*v.T), 1e-300)
        jac = np.empty((len(x), 2, 2))
        for k in range(2):
            dv = v.copy()
            dv[:, k] += eta
            jac[:, :, k] = (fermi_displacement(p, dv, zero, steps)[:, :2] - target - f) / eta[:, None]
        v = v - np.linalg.solve(jac, f[..., None])[..., 0]
    raise ArithmeticError("plane_log did not converge")


# ---------------------------------------------------------------------------
# bridges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BridgeSpec:
    """A tilted catenoidal bridge.

    Attributes
    ----------
    p : tuple of float
        Lattice point in the plane.
    tau : float
        Waist radius (model units).
    h : float
        Height of the waist before tilt.
    kappa : float
        Tilt covector along ``dr`` (Euclidean ``dr``).
    kappa_perp : float
        Elevation; the axis is raised by ``tau kappa_perp``.
    alpha : float
        Exponent of the chart bound ``tau cosh s < 6 tau^alpha``.
    """

    p: tuple
    tau: float
    h: float = 0.0
    kappa: float = 0.0
    kappa_perp: float = 0.0
    alpha: float = balance.DEFAULT_ALPHA

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def frame(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(self.p, dtype=float)
        r = math.hypot(*p)
        er = p / r if r > 0 else np.array([1.0, 0.0])
        return er, np.array([-er[1], er[0]])

    @property
    def e_minus_omega(self) -> float:
        return math.exp((self.p[0] ** 2 + self.p[1] ** 2) / 8.0)

    @property
    def tilt_slope(self) -> float:
        """Slope of the tilt in model coordinates, ``tau kappa e^{-omega(p)}``."""
        return self.tau * self.kappa * self.e_minus_omega

    @property
    def s_max(self) -> float:
        """Chart bound on ``|s|`` from ``tau cosh s < 6 tau^alpha``."""
        return math.acosh(max(6.0 * self.tau ** (self.alpha - 1.0), 1.0))


def _model_from_sheet(spec, X0, Y0, Z0, cos_a, sin_a, tkp):
    X = cos_a * X0 - sin_a * Z0
    Z = sin_a * X0 + cos_a * Z0 + tkp
    return X, Y0, Z


def catenoid_model(spec: BridgeSpec, s, theta):
    """Model coordinates ``(X, Y, Z)`` along ``(e_r, e_theta, e_z)``.

    The catenoid ``(rho cos theta, rho sin theta, tau s + h)`` with
    ``rho = tau cosh s`` is rotated by the tilt and then raised by
    ``tau kappa_perp``.
    """
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(np.abs(s) >= spec.s_max):
        raise ValueError(f"|s| must stay below the chart bound {spec.s_max:.4g}")
    rho = spec.tau * np.cosh(s)
    a = math.atan(spec.tilt_slope)
    return _model_from_sheet(
        spec,
        rho * np.cos(theta),
        rho * np.sin(theta),
        spec.tau * s + spec.h,
        math.cos(a),
        math.sin(a),
        spec.tau * spec.kappa_perp,
    )


def _model_to_plane(spec, X, Y):
    er, et = spec.frame
    return X * er[0] + Y * et[0], X * er[1] + Y * et[1]


def _bridge_displacement(spec: BridgeSpec, X, Y, Z, steps):
    v0, v1 = _model_to_plane(spec, X, Y)
    p = np.broadcast_to(np.asarray(spec.p, dtype=float), np.shape(X) + (2,))
    return fermi_displacement(p, np.stack([v0, v1], -1), Z, steps)


def catenoid_point(spec: BridgeSpec, s, theta, steps: int = FERMI_STEPS, displacement: bool = False) -> np.ndarray:
    """Ambient point of a bridge at parameters ``(s, theta)``.

    Parameters
    ----------
    displacement : bool
        Return the offset from ``(p, 0)`` instead of the point.

    Raises
    ------
    ValueError
        If ``|s|`` exceeds the chart bound.
    """
    X, Y, Z = catenoid_model(spec, s, theta)
    d = _bridge_displacement(spec, np.asarray(X), np.asarray(Y), np.asarray(Z), steps)
    if displacement:
        return d
    out = d.copy()
    out[..., 0] += spec.p[0]
    out[..., 1] += spec.p[1]
    return out


def catenoid_point_mp(spec: BridgeSpec, s, theta, steps: int = 8):
    """High-precision bridge point as a list of three mpmath numbers.

    Uses the current ``mpmath.mp.dps``.  The legs of a bridge core have
    length of order ``tau``, so a few RK4 steps already reach the working
    precision.
    """
    s = mpmath.mpf(s)
    theta = mpmath.mpf(theta)
    tau = mpmath.mpf(spec.tau)
    if abs(float(s)) >= spec.s_max:
        raise ValueError(f"|s| must stay below the chart bound {spec.s_max:.4g}")
    slope = tau * mpmath.mpf(spec.kappa) * mpmath.exp((mpmath.mpf(spec.p[0]) ** 2 + mpmath.mpf(spec.p[1]) ** 2) / 8)
    a = mpmath.atan(slope)
    rho = tau * mpmath.cosh(s)
    X, Y, Z = _model_from_sheet(
        spec,
        rho * mpmath.cos(theta),
        rho * mpmath.sin(theta),
        tau * s + mpmath.mpf(spec.h),
        mpmath.cos(a),
        mpmath.sin(a),
        tau * mpmath.mpf(spec.kappa_perp),
    )
    p0, p1 = mpmath.mpf(spec.p[0]), mpmath.mpf(spec.p[1])
    r = mpmath.sqrt(p0 * p0 + p1 * p1)
    er = (p0 / r, p1 / r)
    v0 = X * er[0] - Y * er[1]
    v1 = X * er[1] + Y * er[0]
    d, _, _ = _fermi_core(p0, p1, v0, v1, Z, steps, mpmath.mpf(1))
    return [p0 + d[0], p1 + d[1], d[2]]


def catenoid_graph(spec: BridgeSpec, sheet: int, x, y, steps: int = FERMI_STEPS, tol: float = 1e-13, max_iter: int = 40):
    """Height of one bridge sheet over plane points.

    Solves ``Pi(bridge(u)) = (x, y)`` for the untilted model point
    ``u = (rho cos theta, rho sin theta)`` of the sheet by Newton iteration,
    seeded by the untilted closed form.

    Parameters
    ----------
    sheet : {+1, -1}
        Upper (``s > 0``) or lower (``s < 0``) sheet.

    Returns
    -------
    ndarray
        Euclidean ``z`` of the sheet above each point.

    Raises
    ------
    ValueError
        If the sheet is not graphical over a point (the iteration leaves
        ``rho > tau`` or fails to converge).
    """
    if sheet not in (1, -1):
        raise ValueError("sheet must be +1 or -1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    px, py = spec.p
    tx = (x - px).ravel()
    ty = (y - py).ravel()
    if tx.size == 0:
        return np.zeros(shape)
    er, et = spec.frame
    ew = 1.0 / spec.e_minus_omega
    u = np.stack([ew * (tx * er[0] + ty * er[1]), ew * (tx * et[0] + ty * et[1])], -1)
    a = math.atan(spec.tilt_slope)
    ca, sa = math.cos(a), math.sin(a)
    tkp = spec.tau * spec.kappa_perp
    tau = spec.tau
    # the normal leg drifts sideways, so the seed may fall inside the waist
    rho_seed = np.hypot(u[:, 0], u[:, 1])
    u = u * (np.maximum(rho_seed, 1.05 * tau) / np.maximum(rho_seed, 1e-300))[:, None]

    def image(u):
        rho = np.hypot(u[:, 0], u[:, 1])
        if np.any(rho <= tau):
            raise ValueError("catenoid sheet is not graphical over the requested points")
        Z0 = sheet * tau * np.arccosh(rho / tau) + spec.h
        X, Y, Z = _model_from_sheet(spec, u[:, 0], u[:, 1], Z0, ca, sa, tkp)
        return _bridge_displacement(spec, X, Y, Z, steps)

    target = np.stack([tx, ty], -1)
    scale = np.hypot(tx, ty)
    for _ in range(max_iter):
        d = image(u)
        f = d[:, :2] - target
        err = np.hypot(*f.T) / scale
        if np.max(err) < tol:
            return d[:, 2].reshape(shape)
        eta = 1e-7 * np.hypot(u[:, 0], u[:, 1])
        jac = np.empty((len(u), 2, 2))
        for k in range(2):
            du = u.copy()
            du[:, k] += eta
            jac[:, :, k] = (image(du)[:, :2] - d[:, :2]) / eta[:, None]
        step = np.linalg.solve(jac, f[..., None])[..., 0]
        lam = np.ones(len(u))
        for _ in range(30):  # damp steps that would cross the waist circle
            bad = np.hypot(*(u - lam[:, None] * step).T) <= tau * (1.0 + 1e-9)
            if not np.any(bad):
                break
            lam[bad] *= 0.5
        u = u - lam[:, None] * step
    raise ValueError("catenoid graph inversion did not converge")


# ---------------------------------------------------------------------------
# weighted mean curvature
# ---------------------------------------------------------------------------


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _h2w_core(get, h):
    """``(H^{2 omega}, H, X.nu)`` from samples ``get(i, j) = X(u + i h', v + j h')``.

    Second-order central differences at steps ``h`` and ``h/2`` are combined
    by Richardson extrapolation.
    """

    def derivs(k):
        # k = 2: step h (offsets of 2 half-steps); k = 1: step h/2
        hh = h * k / 2
        c = get(0, 0)
        pu, mu_, pv, mv = get(k, 0), get(-k, 0), get(0, k), get(0, -k)
        pp, pm, mp_, mm = get(k, k), get(k, -k), get(-k, k), get(-k, -k)
        Xu = [(pu[i] - mu_[i]) / (2 * hh) for i in range(3)]
        Xv = [(pv[i] - mv[i]) / (2 * hh) for i in range(3)]
        Xuu = [(pu[i] - 2 * c[i] + mu_[i]) / (hh * hh) for i in range(3)]
        Xvv = [(pv[i] - 2 * c[i] + mv[i]) / (hh * hh) for i in range(3)]
        Xuv = [(pp[i] - pm[i] - mp_[i] + mm[i]) / (4 * hh * hh) for i in range(3)]
        return Xu, Xv, Xuu, Xvv, Xuv

    coarse = derivs(2)
    fine = derivs(1)
    Xu, Xv, Xuu, Xvv, Xuv = [[(4 * f[i] - c[i]) / 3 for i in range(3)] for f, c in zip(fine, coarse)]
    n = _cross(Xu, Xv)
    nn = _sqrt(_dot(n, n))
    n = [n[i] / nn for i in range(3)]
    E, F, G = _dot(Xu, Xu), _dot(Xu, Xv), _dot(Xv, Xv)
    L, M, N = _dot(Xuu, n), _dot(Xuv, n), _dot(Xvv, n)
    H = (E * N - 2 * F * M + G * L) / (E * G - F * F)
    X = get(0, 0)
    xn = _dot(X, n)
    return H + xn / 2, H, xn


def weighted_mean_curvature(patch: Callable, u, v, h: float, parts: bool = False):
    """``H^{2 omega} = H + X.nu/2`` of a parametrised patch.

    Parameters
    ----------
    patch : callable
        ``patch(u, v)`` returns points of shape ``(..., 3)``; ``u, v`` are
        arrays of equal shape.
    u, v : array_like
        Parameters of the evaluation points.
    h : float
        Finite-difference step in parameter units.
    parts : bool
        Also return ``H`` and ``X.nu``.

    Notes
    -----
    The normal is ``X_u x X_v`` normalised and ``H = Delta X . nu``; with
    this convention the sphere of radius 2 with outward normal has
    ``H = -1`` and ``H^{2 omega} = 0``.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    if h < 1e-12 * max(1.0, float(np.max(np.abs(u), initial=0.0)), float(np.max(np.abs(v), initial=0.0))):
        raise ValueError("step underflow; sample away from region seams")
    cache = {}
    half = h / 2

    def get(i, j):
        key = (i, j)
        if key not in cache:
            X = np.asarray(patch(u + i * half, v + j * half), dtype=float)
            cache[key] = [X[..., 0], X[..., 1], X[..., 2]]
        return cache[key]

    w, H, xn = _h2w_core(get, h)
    return (w, H, xn) if parts else w


def weighted_mean_curvature_mp(patch_mp: Callable, u, v, h, dps: int = 60):
    """mpmath version of :func:`weighted_mean_curvature` at one point.

    ``patch_mp(u, v)`` must return three mpmath numbers.  Returns the tuple
    ``(H^{2 omega}, H, X.nu)`` as floats.
    """
    with mpmath.workdps(dps):
        u = mpmath.mpf(u)
        v = mpmath.mpf(v)
        h = mpmath.mpf(h)
        half = h / 2
        cache = {}

        def get(i, j):
            key = (i, j)
            if key not in cache:
                cache[key] = list(patch_mp(u + i * half, v + j * half))
            return cache[key]

        w, H, xn = _h2w_core(get, h)
        return float(w), float(H), float(xn)


def graph_patch(f: Callable) -> Callable:
    """Patch ``(x, y) -> (x, y, f(x, y))`` for :func:`weighted_mean_curvature`."""

    def patch(x, y):
        return np.stack(np.broadcast_arrays(x, y, f(x, y)), axis=-1)

    return patch


# ---------------------------------------------------------------------------
# the initial surface as data
# ---------------------------------------------------------------------------


def _phi_m(r: float) -> float:
    v, _ = kummer_m_half(np.asarray(r * r / 4.0))
    return float(v)


@dataclass(frozen=True)
class SurfaceData:
    """Everything needed to evaluate the initial surface.

    Attributes
    ----------
    two_J, m : int
    pv : ParamVector
    derived : DerivedParams
    sols : dict
        Level LD solution per doubled level index.
    nu : dict
        ``(nu, nu')`` per slot ``(two_j, side)`` with side ``+1`` / ``-1``.
    obstructions : dict
        :class:`ld.Obstruction` per doubled interface index.
    hole : dict
        Radius of the disk removed around each point of an interface.
    delta_prime : dict
        Effective gluing scale per interface.
    d_min : float
        Smallest distance between singular points of one level.
    R_out : float
    residual : float or None
        Matching residual of ``pv`` when it came from a Newton solve.
    waist_scale : dict
        Factor applied to ``tau`` per interface when waists were shrunk for
        drawing; empty for the faithful construction.
    """

    two_J: int
    m: int
    pv: balance.ParamVector
    derived: balance.DerivedParams
    sols: dict = field(repr=False)
    nu: dict = field(repr=False)
    obstructions: dict = field(repr=False)
    hole: dict = field(repr=False)
    delta_prime: dict = field(repr=False)
    d_min: float = 0.0
    R_out: float = DEFAULT_R_OUT
    residual: Optional[float] = None
    waist_scale: dict = field(default_factory=dict)

    @property
    def group(self) -> str:
        return "D_mh" if self.two_J % 2 == 1 else "D_md"

    @property
    def tau_max(self) -> float:
        return max(self.derived.tau.values())

    def bridge(self, two_ell: int, index: int) -> BridgeSpec:
        lat = self.derived.lattice(two_ell)
        kp, k = self.pv.kappa_pair(two_ell)
        return BridgeSpec(
            p=tuple(float(c) for c in lat.points()[index]),
            tau=self.derived.tau[two_ell],
            h=self.derived.h[two_ell],
            kappa=k,
            kappa_perp=kp,
            alpha=self.derived.alpha,
        )

    def sides(self, two_j: int):
        """Present sides of a level as ``(side, two_ell, sheet)``.

        The lattice of the interface below a level carries the upper sheet of
        its bridges there; the one above carries the lower sheet.
        """
        _, _, _, _, lp, lm = self.derived.level(two_j)
        out = []
        if lp is not None:
            out.append((1, lp, 1))
        if lm is not None:
            out.append((-1, lm, -1))
        return out


def _all_nu(pv, dp, sols) -> dict:
    out = {}
    for tj, sol in sols.items():
        tp, tm, hp, hm, lp, lm = dp.level(tj)
        for s, h, ell in ((1, hp, lp), (-1, hm, lm)):
            if ell is None:
                continue
            mis = ld.extract_affine(sol, "plus" if s > 0 else "minus", 0, h)
            kp, k = pv.kappa_pair(ell)
            out[(tj, s)] = (mis.mu - kp, mis.mu_prime - k)
    return out


def _level_d_min(dp) -> float:
    best = math.inf
    for tj in balance.levels(dp.two_J):
        _, _, _, _, lp, lm = dp.level(tj)
        pts = np.concatenate([dp.lattice(e).points() for e in (lp, lm) if e is not None])
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        d[np.diag_indices(len(pts))] = np.inf
        best = min(best, float(d.min()))
    return best


def prepare_surface(
    two_J: int,
    m: int,
    pv: Optional[balance.ParamVector] = None,
    n_modes: int = ld.DEFAULT_N_MODES,
    alpha: float = balance.DEFAULT_ALPHA,
    R_out: float = DEFAULT_R_OUT,
    shrink_waists: bool = False,
    **newton_kw,
) -> SurfaceData:
    """Assemble :class:`SurfaceData`, running the matching solve if needed.

    Scales: the hole around a point of interface ``l`` has radius
    ``min(9 tau_l, d_min/8, pi r_min/(10 m))``, but at least 1.1 times the
    Euclidean waist radius, and the gluing scale is
    ``min(tau_l^alpha, delta/4, d_min/12)``, raised to 0.55 times the hole
    radius when the hole would reach the blend annulus.  At moderate ``m``
    the ordering ``9 tau < delta' < delta`` of the construction does not hold
    for ``delta' = tau^alpha``; the clamps restore it where possible.
    """
    residual = None
    if pv is None:
        res = balance.newton_solve(two_J, m, alpha=alpha, n_modes=n_modes, **newton_kw)
        pv, dp, residual = res.pv, res.derived, res.residual
    else:
        dp = balance.derive_params(pv, m, alpha)
    d_min = _level_d_min(dp)
    waist_scale = {}
    if shrink_waists:
        new_tau = dict(dp.tau)
        for e, tau in dp.tau.items():
            limit = 0.25 * d_min / 1.1 * math.exp(-dp.r[e] ** 2 / 8.0)
            if tau > limit:
                new_tau[e] = limit
                waist_scale[e] = limit / tau
        if waist_scale:
            dp = dataclasses.replace(dp, tau=new_tau)
    sols = {tj: balance.level_solution(dp, tj, n_modes) for tj in balance.levels(two_J)}
    nu = _all_nu(pv, dp, sols)
    hole, dprime = {}, {}
    cap = min(d_min / 8.0, math.pi * min(dp.r.values()) / (10.0 * m))
    for e, tau in dp.tau.items():
        waist = tau * math.exp(dp.r[e] ** 2 / 8.0)  # Euclidean waist radius
        hole[e] = max(min(9.0 * tau, cap), 1.1 * waist)
        if hole[e] > 0.4 * d_min:
            raise ValueError(f"waist {tau:.3g} too large for m={m}: bridges would collide")
        dp_e = min(tau**alpha, dp.delta / 4.0, d_min / 12.0)
        if 2.0 * dp_e < 1.1 * hole[e]:
            dp_e = 0.55 * hole[e]
        dprime[e] = dp_e
    obstructions = {e: ld.obstruction_fns(dp.lattice(e)) for e in dp.tau}
    return SurfaceData(
        two_J=two_J,
        m=m,
        pv=pv,
        derived=dp,
        sols=sols,
        nu=nu,
        obstructions=obstructions,
        hole=hole,
        delta_prime=dprime,
        d_min=d_min,
        R_out=R_out,
        residual=residual,
        waist_scale=waist_scale,
    )


def _nearest_on_level(data: SurfaceData, two_j: int, xy: np.ndarray):
    """Distance, side index into ``data.sides`` and point index of the nearest singular point."""
    best_d = np.full(len(xy), np.inf)
    best_side = np.zeros(len(xy), dtype=int)
    best_idx = np.zeros(len(xy), dtype=int)
    for k, (_, ell, _) in enumerate(data.sides(two_j)):
        pts = data.derived.lattice(ell).points()
        diff = xy[:, None, :] - pts[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        i = np.argmin(d, axis=1)
        di = d[np.arange(len(xy)), i]
        better = di < best_d
        best_d = np.where(better, di, best_d)
        best_side = np.where(better, k, best_side)
        best_idx = np.where(better, i, best_idx)
    return best_d, best_side, best_idx


def phi_ld_part(data: SurfaceData, two_j: int, x, y) -> np.ndarray:
    """``phi_j + v_j + E^{-1} kappa_j = phi_j - sum tau (nu V + nu' V')``."""
    xy, shape = ld._as_points(x, y)
    out = ld.eval_xy(data.sols[two_j], xy[:, 0], xy[:, 1])
    tp, tm, *_ = data.derived.level(two_j)
    for s, ell, _ in data.sides(two_j):
        tau = tp if s > 0 else tm
        nu, nup = data.nu[(two_j, s)]
        ob = data.obstructions[ell]
        out = out - tau * (nu * ob.V(xy[:, 0], xy[:, 1]) + nup * ob.V_prime(xy[:, 0], xy[:, 1]))
    return out.reshape(shape)


def graph_phi_gl(data: SurfaceData, two_j: int, x, y, steps: int = FERMI_STEPS) -> np.ndarray:
    """Graph function of level ``j`` of the initial surface.

    Away from the singular points this is :func:`phi_ld_part`; inside
    ``D_p(3 delta')`` it is blended with the bridge sheet through
    ``psi_cut[2 delta', 3 delta']`` and equals the sheet near ``2 delta'``.

    Raises
    ------
    ValueError
        Inside a removed disk, or if a bridge sheet is not graphical.
    """
    xy, shape = ld._as_points(x, y)
    d, side_k, idx = _nearest_on_level(data, two_j, xy)
    sides = data.sides(two_j)
    out = np.zeros(len(xy))
    if not sides:
        return out.reshape(shape)
    dprime = np.array([data.delta_prime[ell] for _, ell, _ in sides])[side_k]
    holes = np.array([data.hole[ell] for _, ell, _ in sides])[side_k]
    if np.any(d < 0.5 * holes):
        raise ValueError("point lies inside a removed disk")
    far = d > 2.0 * dprime
    if np.any(far):
        out[far] = phi_ld_part(data, two_j, xy[far, 0], xy[far, 1])
    w = np.where(far, ld.cutoff(2.0, 3.0, d / dprime), 0.0)
    near = d < 3.0 * dprime
    for k, (s, ell, sheet) in enumerate(sides):
        sel_k = near & (side_k == k)
        for i in np.unique(idx[sel_k]):
            sel = sel_k & (idx == i)
            spec = data.bridge(ell, int(i))
            cat = catenoid_graph(spec, sheet, xy[sel, 0], xy[sel, 1], steps=steps)
            out[sel] = w[sel] * out[sel] + (1.0 - w[sel]) * cat
    return out.reshape(shape)


def ordering_gaps(data: SurfaceData, n_r: int = 24, n_t: int = 16, r_max: float = 6.0) -> dict:
    """``(phi_gl_{j+1} - phi_gl_j) / tau_max`` on a sample grid.

    Samples cover one fundamental sector and avoid ``D_p(delta')`` of both
    levels.  Returns the minimum per pair of consecutive levels.
    """
    m = data.m
    r = np.linspace(0.2, r_max, n_r)
    t = np.linspace(0.0, 2.0 * math.pi / m, n_t, endpoint=False) + 0.37 * math.pi / (m * n_t)
    R, T = np.meshgrid(r, t, indexing="ij")
    x, y = (R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()
    xy = np.column_stack([x, y])
    keep = np.ones(len(xy), dtype=bool)
    for e in data.derived.tau:
        pts = data.derived.lattice(e).points()
        dd = np.min(np.hypot(xy[:, None, 0] - pts[None, :, 0], xy[:, None, 1] - pts[None, :, 1]), axis=1)
        keep &= dd > max(3.0 * data.delta_prime[e], data.hole[e] * 1.5)
    x, y = x[keep], y[keep]
    out = {}
    lv = balance.levels(data.two_J)
    vals = {tj: graph_phi_gl(data, tj, x, y) for tj in lv}
    for a, b in zip(lv[:-1], lv[1:]):
        out[(a, b)] = float(np.min(vals[b] - vals[a]) / data.tau_max)
    return out


# ---------------------------------------------------------------------------
# cone slopes
# ---------------------------------------------------------------------------


def _slope_unit(m: int, tau: float, r_bar: float) -> float:
    return 0.5 * math.sqrt(math.pi) * m * tau * _phi_m(r_bar) * math.exp(-r_bar * r_bar / 8.0)


def cone_slopes(data: SurfaceData, radii=(50.0, 100.0, 200.0), rel_tol: float = 0.02) -> list[dict]:
    """Closed-form and extrapolated numeric cone slope of every level.

    The closed form is ``sum_+- +-(sqrt(pi) m / 2) tau phi_m(r) e^{-r^2/8}``
    over the lattices of the level.  The numeric slope fits
    ``phi_j(r)/r = s + c / r^2`` through evaluations at ``radii``.

    Returns
    -------
    list of dict
        Rows with ``j``, ``closed``, ``numeric``, ``rel_diff`` and ``flag``.
    """
    rows = []
    dp = data.derived
    radii = np.asarray(radii, dtype=float)
    scale = max(_slope_unit(data.m, t, dp.r[e]) for e, t in dp.tau.items())
    for tj in balance.levels(data.two_J):
        tp, tm, _, _, lp, lm = dp.level(tj)
        closed = 0.0
        if lp is not None:
            closed += _slope_unit(data.m, tp, dp.r[lp])
        if lm is not None:
            closed -= _slope_unit(data.m, tm, dp.r[lm])
        vals = ld.eval_xy(data.sols[tj], radii * math.cos(0.1), radii * math.sin(0.1))
        A = np.column_stack([np.ones_like(radii), radii**-2])
        coef, *_ = np.linalg.lstsq(A, vals / radii, rcond=None)
        numeric = float(coef[0])
        denom = max(abs(closed), 1e-300)
        if abs(closed) < 1e-9 * scale:
            rel = abs(numeric) / scale
        else:
            rel = abs(numeric - closed) / denom
        rows.append(
            {
                "j": tj / 2.0,
                "closed": closed,
                "numeric": numeric,
                "rel_diff": rel,
                "flag": bool(rel > rel_tol),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


def _graph_h2w(f, x, y, h):
    return weighted_mean_curvature(graph_patch(f), x, y, h)


def _bridge_core_samples(data, two_ell, b, s_values, thetas, dps, fd_step):
    spec = data.bridge(two_ell, 0)
    s_core = math.acosh(b)
    rows = []
    for s in s_values:
        if abs(s) > s_core:
            continue
        for th in thetas:

            def patch(u, v):
                return catenoid_point_mp(spec, u, v)

            w, H, xn = weighted_mean_curvature_mp(patch, s, th, fd_step, dps=dps)
            with mpmath.workdps(dps):
                z = float(catenoid_point_mp(spec, s, th)[2])
            rho = spec.tau * math.cosh(s)
            rows.append(
                {
                    "s": s,
                    "theta": th,
                    "rho": rho,
                    "z": z,
                    "H2w": w,
                    "ratio": abs(w) / (abs(z) + spec.tau),
                }
            )
    return rows


def residual_report(
    data: SurfaceData,
    n_r: int = 10,
    n_t: int = 8,
    r_range: tuple = (0.4, 4.0),
    b: float = DEFAULT_B,
    s_values=(-2.5, -1.0, 0.0, 0.7, 2.0),
    thetas=(0.0, 1.1, 2.3),
    dps: Optional[int] = None,
    fd_step: Optional[float] = None,
    include_bridges: bool = True,
    include_annuli: bool = True,
) -> dict:
    """Sup norms of ``H^{2 omega}`` per region.

    Regions: (a) graph regions away from gluing annuli and obstruction
    supports; (b) bridge cores ``rho <= b tau``; (c) gluing annuli
    ``2 delta' < d < 3 delta'``; (d) obstruction annuli
    ``delta < d < 2 delta``, where the designed term
    ``w_j = -sum tau (nu W + nu' W')`` is also reported.

    Graph residuals use central differences of the graph function with a
    step tied to the local scale; bridge residuals use mpmath at ``dps``
    digits because the waist is far below double resolution for large ``m``.
    The fourth-order truncation error of the bridge residual is of size
    ``h^4 / tau`` and must stay below ``tau``, so the default step is
    ``h = min(1e-7, 1e-3 sqrt(tau))``; the default precision keeps the
    rounding error ``10^-dps / (h^2 tau^2)`` ten digits below ``tau``.
    """
    tau_min = min(data.derived.tau.values())
    if fd_step is None:
        fd_step = min(1e-7, 1e-3 * math.sqrt(tau_min))
    if dps is None:
        dps = max(60, 10 + math.ceil(-math.log10(tau_min**3 * fd_step**2)))
    m = data.m
    dp = data.derived
    out = {"m": m, "J": data.two_J / 2.0, "tau_max": data.tau_max}
    # (a)
    r = np.linspace(*r_range, n_r)
    t = (np.arange(n_t) + 0.5) * (2.0 * math.pi / m) / n_t
    R, T = np.meshgrid(r, t, indexing="ij")
    x0, y0 = (R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()
    h = 0.05 / m
    sup_a = 0.0
    for tj in balance.levels(data.two_J):
        xy = np.column_stack([x0, y0])
        d, side_k, _ = _nearest_on_level(data, tj, xy)
        excl = 0.0
        for _, ell, _ in data.sides(tj):
            excl = max(excl, 3.0 * data.delta_prime[ell], 2.0 * dp.delta)
        keep = d > 1.05 * excl + 3.0 * h
        if not np.any(keep):
            continue

        def f(x, y, tj=tj):
            return graph_phi_gl(data, tj, x, y)

        w = _graph_h2w(f, x0[keep], y0[keep], h)
        sup_a = max(sup_a, float(np.max(np.abs(w))))
    out["graph"] = {"sup": sup_a, "sup_over_tau": sup_a / data.tau_max, "step": h}
    # (b)
    if include_bridges:
        rows = []
        for e in sorted(dp.tau):
            if e < 0:
                continue  # the others follow by symmetry
            tau = dp.tau[e]
            rows += [dict(row, ell=e / 2.0) for row in _bridge_core_samples(data, e, b, s_values, thetas, dps, fd_step)]
        out["bridge_core"] = {
            "sup": max(abs(row["H2w"]) for row in rows),
            "sup_ratio": max(row["ratio"] for row in rows),
            "samples": rows,
            "fd_step": fd_step,
            "dps": dps,
        }
    if include_annuli:
        glue, obst, obst_w, consistency = 0.0, 0.0, 0.0, 0.0
        n_ring = 8
        ang = (np.arange(n_ring) + 0.25) * 2.0 * math.pi / n_ring
        for tj in balance.levels(data.two_J):
            tp, tm, *_ = dp.level(tj)
            for s, ell, sheet in data.sides(tj):
                p = dp.lattice(ell).points()[0]
                dpr = data.delta_prime[ell]
                spec = data.bridge(ell, 0)
                f = lambda x, y, tj=tj: graph_phi_gl(data, tj, x, y)  # noqa: E731
                # (c) gluing annulus
                rad = 2.5 * dpr
                gx, gy = p[0] + rad * np.cos(ang), p[1] + rad * np.sin(ang)
                wv = _graph_h2w(f, gx, gy, dpr / 40.0)
                glue = max(glue, float(np.max(np.abs(wv))))
                cat = catenoid_graph(spec, sheet, gx, gy)
                lds = phi_ld_part(data, tj, gx, gy)
                consistency = max(consistency, float(np.max(np.abs(cat - lds))))
                # (d) obstruction annulus, if outside the gluing region
                if 3.0 * dpr < dp.delta:
                    rad = 1.5 * dp.delta
                    ox, oy = p[0] + rad * np.cos(ang), p[1] + rad * np.sin(ang)
                    wv = _graph_h2w(f, ox, oy, dp.delta / 40.0)
                    designed = np.zeros_like(ox)
                    for s2, ell2, _ in data.sides(tj):
                        tau2 = tp if s2 > 0 else tm
                        nu, nup = data.nu[(tj, s2)]
                        ob = data.obstructions[ell2]
                        designed -= tau2 * (nu * ob.W(ox, oy) + nup * ob.W_prime(ox, oy))
                    obst = max(obst, float(np.max(np.abs(wv))))
                    obst_w = max(obst_w, float(np.max(np.abs(wv - designed))))
        out["gluing"] = {"sup": glue, "blend_difference": consistency}
        out["obstruction"] = {"sup": obst, "sup_minus_w": obst_w}
    return out
