"""Invariant suite behind ``shrinkstack check``.

Each check measures one quantity, compares it with a threshold and records
the outcome as a :class:`CheckResult`.  The suite is organised by module so
that ``--filter`` can select one part.  All checks are deterministic.
"""

from __future__ import annotations

import math
import time
import warnings
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import mpmath
import numpy as np
from scipy import integrate

from . import balance, geometry, ld, mesh, rld, specfun

MODULES = ("specfun", "rld", "ld", "balance", "geometry", "mesh")


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one check.

    Attributes
    ----------
    module, name : str
    passed : bool
    value : float
        Measured quantity.
    threshold : float
        Bound the quantity is compared against.
    seconds : float
        Wall time of the check.
    message : str
        Error text when the check raised.
    """

    module: str
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float
    message: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.message})" if self.message else ""
        return f"{status}  {self.module}.{self.name}: {self.value:.3e} vs {self.threshold:.1e}{extra}"

    def to_dict(self) -> dict:
        return asdict(self)


_REGISTRY: list[tuple[str, str, float, Callable[[], float]]] = []


def _check(module: str, name: str, threshold: float):
    """Register ``fn`` returning a value that passes when ``<= threshold``."""

    def deco(fn):
        _REGISTRY.append((module, name, threshold, fn))
        return fn

    return deco


def registered(module: Optional[str] = None) -> list[str]:
    return [f"{m}.{n}" for m, n, _, _ in _REGISTRY if module in (None, m)]


def run(module: Optional[str] = None) -> list[CheckResult]:
    """Run all checks, or only those of ``module``."""
    if module is not None and module not in MODULES:
        raise ValueError(f"unknown module {module!r}")
    out = []
    for mod, name, thr, fn in _REGISTRY:
        if module is not None and mod != module:
            continue
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                value = float(fn())
            passed = bool(value <= thr)
            msg = ""
        except Exception as exc:  # a raising check is a failed check
            value, passed, msg = math.nan, False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(mod, name, passed, value, thr, time.perf_counter() - t0, msg))
    return out


def junit_xml(results: list[CheckResult], config: Optional[dict] = None) -> str:
    """JUnit-style XML; one ``testsuite`` per module, config as properties."""
    root = ET.Element("testsuites", name="shrinkstack")
    for mod in MODULES:
        rows = [r for r in results if r.module == mod]
        if not rows:
            continue
        suite = ET.SubElement(
            root,
            "testsuite",
            name=mod,
            tests=str(len(rows)),
            failures=str(sum(not r.passed for r in rows)),
            time=f"{sum(r.seconds for r in rows):.3f}",
        )
        if config:
            props = ET.SubElement(suite, "properties")
            for k in sorted(config):
                ET.SubElement(props, "property", name=k, value=str(config[k]))
        for r in rows:
            case = ET.SubElement(suite, "testcase", classname=f"shrinkstack.{mod}", name=r.name, time=f"{r.seconds:.3f}")
            ET.SubElement(case, "system-out").text = f"value={r.value!r} threshold={r.threshold!r}"
            if not r.passed:
                fail = ET.SubElement(case, "failure", message=r.message or "threshold exceeded")
                fail.text = r.line()
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


# ---------------------------------------------------------------------------
# specfun
# ---------------------------------------------------------------------------


@_check("specfun", "gamma_half", 1e-15)
def _gamma_half():
    return abs(specfun.gamma_fn(0.5) - math.sqrt(math.pi)) / math.sqrt(math.pi)


@_check("specfun", "kummer_vs_mpmath", 1e-12)
def _kummer_mp():
    worst = 0.0
    for a, b, x in ((-0.5, 1.0, 0.3), (-0.5, 1.0, 25.0), (1.5, 3.0, 12.0), (3.5, 1.0, 60.0), (-2.5, 2.0, 7.0)):
        ref = float(mpmath.hyp1f1(a, b, x))
        worst = max(worst, abs(specfun.kummer_m(a, b, x)[0] - ref) / abs(ref))
    return worst


@_check("specfun", "tricomi_vs_mpmath", 1e-12)
def _tricomi_mp():
    worst = 0.0
    for a, b, x in ((-0.5, 1.0, 0.3), (-0.5, 1.0, 25.0), (1.5, 3.0, 12.0), (3.5, 1.0, 60.0), (-2.5, 2.0, 7.0)):
        ref = float(mpmath.hyperu(a, b, x))
        worst = max(worst, abs(specfun.tricomi_u(a, b, x)[0] - ref) / abs(ref))
    return worst


@_check("specfun", "half_closed_forms", 1e-12)
def _half_forms():
    x = np.array([0.01, 0.5, 2.0, 9.0, 30.0])
    km, _ = specfun.kummer_m_half(x)
    tu, _ = specfun.tricomi_u_half(x)
    e1 = max(abs(km[i] - specfun.kummer_m(-0.5, 1.0, xi)[0]) / abs(km[i]) for i, xi in enumerate(x))
    e2 = max(abs(tu[i] - specfun.tricomi_u(-0.5, 1.0, xi)[0]) / abs(tu[i]) for i, xi in enumerate(x))
    return max(e1, e2)


# ---------------------------------------------------------------------------
# rld
# ---------------------------------------------------------------------------


@_check("rld", "roots", 0.01)
def _roots():
    rt = rld.find_roots()
    return max(abs(rt.r_m - 2.51), abs(rt.r_u - 0.88), abs(rt.r_mu - 1.52))


@_check("rld", "wronskian", 1e-8)
def _wronskian():
    worst = 0.0
    for k in (0, 1, 2):
        basis = rld.phi_mu_basis(k)
        for r in np.linspace(0.1, 10.0, 200):
            ref = basis.wronskian(r)
            worst = max(worst, abs(basis.wronskian_numeric(r) - ref) / abs(ref))
    return worst


@_check("rld", "h_hat_root", 1e-12)
def _h_hat_root():
    return abs(rld.h_hat(rld.find_roots().r_mu))


@_check("rld", "profile_ode_residual", 1e-10)
def _ode_residual():
    rb = rld.find_roots().r_mu
    return max(rld.avg_profile(rb, 32).ode_residual(), rld.solve_phibar(1.0, 0.3, rb).ode_residual())


# ---------------------------------------------------------------------------
# ld
# ---------------------------------------------------------------------------


def mode0_error(m: int, r_bar: float, n_r: int = 30, per_m: int = 32, near: float = 0.05) -> float:
    """Circular average of an LD solution against :func:`rld.avg_profile`.

    Radii are ``n_r`` geometric samples of ``[0.1, 50]`` plus five radii
    within ``1e-2`` of ``r_bar`` (``r_bar`` itself included).  Away from the
    circle the average is a trapezoidal sum over ``per_m * m`` angles, which
    is exact for the retained modes.  Within ``near`` of ``r_bar`` the
    logarithmic peaks are too sharp for that rule, so the average uses
    adaptive quadrature over one period split at the singular angle.
    Returns the largest error relative to ``max(1, |avg|)``.
    """
    lat = ld.SingularLattice(0, r_bar, m)
    sol = ld.build_ld(lat, None, 1.0, 0.0)
    r = np.concatenate([np.geomspace(0.1, 50.0, n_r), r_bar + np.array([-1e-2, -1e-4, 0.0, 1e-4, 1e-2])])
    n = per_m * m
    th = 2.0 * math.pi * (np.arange(n) + 0.5) / n
    period = 2.0 * math.pi / m
    t0 = lat.theta0
    num = np.empty(len(r))
    for i, ri in enumerate(r):
        if abs(ri - r_bar) >= near:
            num[i] = ld.eval_ld(sol, np.full(n, ri), th).mean()
            continue

        def f(t, ri=ri):
            return float(ld.eval_ld(sol, np.array([ri]), np.array([t]))[0])

        total = 0.0
        for a, b in ((t0 - period / 2, t0), (t0, t0 + period / 2)):
            total += integrate.quad(f, a, b, limit=200, epsabs=1e-14, epsrel=1e-13)[0]
        num[i] = total / period
    ref = rld.avg_profile(r_bar, m).evaluate(r)[0]
    return float(np.max(np.abs(num - ref) / np.maximum(1.0, np.abs(ref))))


@_check("ld", "mode0_oracle", 1e-9)
def _mode0():
    return mode0_error(16, rld.find_roots().r_mu)


@_check("ld", "cylinder_limit_monotone", 0.0)
def _cyl():
    errs = [ld.cylinder_limit_error(m) for m in (16, 32, 64)]
    return max(errs[1] - errs[0], errs[2] - errs[1], 0.0)


@_check("ld", "green_cyl_log2", 1e-15)
def _green():
    return abs(ld.green_cyl(0.0, math.pi) - math.log(2.0))


@_check("ld", "extraction_vs_oracle", 1e-7)
def _extract():
    rb = rld.find_roots().r_mu
    sol = ld.build_ld(ld.SingularLattice(0, rb, 16), ld.SingularLattice(1, 1.45, 16), 0.01, 0.012)
    a = ld.extract_affine(sol, "plus", 0, 0.0)
    b = ld.affine_exact(sol, "plus", 0, 0.0)
    return max(abs(a.mu - b.mu), abs(a.mu_prime - b.mu_prime) / max(1.0, abs(b.mu_prime)))


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------


@_check("balance", "toeplitz_eigenpairs", 1e-10)
def _toeplitz():
    worst = 0.0
    for n in range(1, 21):
        (lam, vec), _ = balance.toeplitz_eigs(n)
        T = balance.tridiagonal(n)
        worst = max(worst, float(np.max(np.abs(T @ vec - vec * lam[None, :]))))
    return worst


@_check("balance", "trig_balance_identity", 1e-12)
def _trig():
    worst = 0.0
    for two_J in range(1, 21):
        for two_j in range(-two_J, two_J + 1, 2):
            if abs(math.cos(math.pi * (two_j / 2.0 - 0.5) / (two_J + 1.0))) > 1e-12:
                worst = max(worst, balance.trig_balance_check(two_J, two_j))
    return worst


@_check("balance", "newton_half_64", 1e-6)
def _newton():
    res = balance.newton_solve(1, 64)
    if res.iterations > 12:
        raise ArithmeticError(f"{res.iterations} iterations")
    return res.residual


@_check("balance", "newton_fixed_point", 1e-6)
def _fixed_point():
    res = balance.newton_solve(2, 64)
    again = balance.newton_solve(2, 64, pv0=res.pv)
    if again.iterations > 1:
        raise ArithmeticError(f"restart took {again.iterations} iterations")
    return again.residual


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

_BASE_POINTS = np.array([[0.0, 0.0], [1.5, 0.0], [0.3, -2.0], [3.0, 1.0], [-1.0, 1.0]])


def geodesic_ratios(s_values=(0.2, 0.1, 0.05, 0.025)) -> np.ndarray:
    """``|e^omega Z_s - s| / s^3`` at the five base points, one row per ``s``."""
    rows = []
    for s in s_values:
        d = geometry.normal_geodesic_defect(_BASE_POINTS, np.full(len(_BASE_POINTS), s))
        rows.append(np.abs(d) / s**3)
    return np.array(rows)


@_check("geometry", "geodesic_cubic_bound", 2.0)
def _geodesic():
    ratios = geodesic_ratios()
    return float(np.max(ratios[1:] / np.maximum(ratios[0], 1e-300)))


@_check("geometry", "fermi_speed_drift", 1e-9)
def _drift():
    return geometry.fermi_speed_drift(_BASE_POINTS, np.full((5, 2), 0.05), np.full(5, 0.08))


@_check("geometry", "sphere_radius_2", 1e-6)
def _sphere():
    def patch(u, v):
        return 2.0 * np.stack([np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.cos(u)], -1)

    u, v = np.meshgrid(np.linspace(0.4, 2.7, 7), np.linspace(0.0, 6.0, 7))
    return float(np.max(np.abs(geometry.weighted_mean_curvature(patch, u.ravel(), v.ravel(), 1e-3))))


@_check("geometry", "plane", 1e-12)
def _plane():
    patch = geometry.graph_patch(lambda x, y: 0.0 * x)
    return float(np.max(np.abs(geometry.weighted_mean_curvature(patch, np.array([0.3, 2.0]), np.array([1.0, -1.0]), 1e-3))))


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@_check("mesh", "topology_half_8", 1e-9)
def _topology():
    surf, _ = mesh.build_initial_surface(1, 8)
    s = surf.summary()
    if not (s["watertight"] and s["oriented"]):
        raise ArithmeticError("mesh not watertight or not oriented")
    if s["genus"] != 7 or s["boundary_loops"] != 2:
        raise ArithmeticError(f"genus {s['genus']}, {s['boundary_loops']} loops")
    return max(mesh.symmetry_errors(surf).values())
