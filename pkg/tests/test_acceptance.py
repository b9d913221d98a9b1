"""Acceptance criteria, one test per criterion.

Each criterion prints one ``PASS`` / ``FAIL`` line.  Under pytest the lines
are collected and repeated in the terminal summary; run this file directly
(``python tests/test_acceptance.py``) to print them without pytest.
"""

from __future__ import annotations

import math
import time
import warnings

import numpy as np
import pytest

from shrinkstack import balance, geometry, ld, mesh, rld
from shrinkstack.checks import geodesic_ratios, mode0_error


def roots():
    t0 = time.perf_counter()
    rt = rld.find_roots()
    dt = time.perf_counter() - t0
    errs = {"r_m": rt.r_m - 2.51, "r_u": rt.r_u - 0.88, "r_mu": rt.r_mu - 1.52}
    ok = all(abs(e) <= 0.01 for e in errs.values()) and dt < 1.0
    return ok, f"r_m={rt.r_m:.5f} r_u={rt.r_u:.5f} r_mu={rt.r_mu:.5f} in {dt:.2f}s"


def wronskian():
    worst = 0.0
    for k in (0, 1, 2):
        basis = rld.phi_mu_basis(k)
        for r in np.linspace(0.1, 10.0, 200):
            ref = basis.wronskian(r)
            worst = max(worst, abs(basis.wronskian_numeric(r) - ref) / abs(ref))
    return worst < 1e-8, f"max relative error {worst:.2e}"


def toeplitz_trig():
    eig = 0.0
    for n in range(1, 21):
        (lam, vec), _ = balance.toeplitz_eigs(n)
        T = balance.tridiagonal(n)
        eig = max(eig, float(np.max(np.abs(T @ vec - vec * lam))))
    trig = 0.0
    for two_J in range(1, 21):
        for two_j in range(-two_J, two_J + 1, 2):
            # the identity divides by cos(pi (j - 1/2) / (2J + 1)); skip its zero
            if abs(math.cos(math.pi * (two_j / 2.0 - 0.5) / (two_J + 1.0))) > 1e-12:
                trig = max(trig, balance.trig_balance_check(two_J, two_j))
    return eig < 1e-10 and trig < 1e-12, f"eigen residual {eig:.2e}, trig residual {trig:.2e}"


def mode0():
    r_mu = rld.find_roots().r_mu
    a = mode0_error(16, r_mu)
    b = mode0_error(64, 1.4)
    return max(a, b) < 1e-9, f"(16, r_mu) {a:.2e}, (64, 1.4) {b:.2e}"


def cylinder():
    t0 = time.perf_counter()
    errs = [ld.cylinder_limit_error(m) for m in (16, 32, 64)]
    dt = time.perf_counter() - t0
    ok = errs[0] > errs[1] > errs[2] and dt < 60.0
    return ok, "sup errors " + ", ".join(f"{e:.2e}" for e in errs) + f" in {dt:.1f}s"


def matching():
    parts, ok = [], True
    for two_J, m in ((1, 64), (2, 64), (3, 96)):
        t0 = time.perf_counter()
        res = balance.newton_solve(two_J, m)
        dt = time.perf_counter() - t0
        size = float(np.linalg.norm(res.pv.to_array()))
        ok &= res.residual < 1e-6 and res.iterations <= 20 and size <= 50.0 and dt < 300.0
        parts.append(f"J={two_J / 2}: {res.iterations} it, residual {res.residual:.1e}, |pv| {size:.2f}")
    return ok, "; ".join(parts)


def topology():
    parts, ok = [], True
    for two_J, m, kw in ((1, 8, {}), (2, 8, {}), (3, 6, {"shrink_waists": True, "tol": 1e-5})):
        surf, _ = mesh.build_initial_surface(two_J, m, **kw)
        sym = max(mesh.symmetry_errors(surf).values())
        g, b = surf.genus(), len(surf.boundary_loops())
        ok &= g == two_J * (m - 1) and b == two_J + 1 and sym < 1e-9
        parts.append(f"(J={two_J / 2}, m={m}) genus {g} loops {b} sym {sym:.1e}")
    return ok, "; ".join(parts)


def residual_decay():
    reps = [
        geometry.residual_report(geometry.prepare_surface(1, m), include_annuli=False) for m in (32, 64)
    ]
    graph = [r["graph"]["sup"] for r in reps]
    ratio = [r["bridge_core"]["sup_ratio"] for r in reps]
    ok = graph[1] < graph[0] and max(ratio) < 1.0
    return ok, f"graph sup {graph[0]:.2e} -> {graph[1]:.2e}; bridge ratio {ratio[0]:.3f}, {ratio[1]:.3f} (bound 1)"


def cone_slopes():
    rows = geometry.cone_slopes(geometry.prepare_surface(2, 64))
    middle = [r for r in rows if r["j"] == 0.0][0]
    others = [r for r in rows if r["j"] != 0.0]
    ok = abs(middle["numeric"]) <= 1e-9 and all(r["rel_diff"] < 0.02 for r in others)
    worst = max(r["rel_diff"] for r in others)
    return ok, f"worst relative difference {worst:.1e}, middle level {abs(middle['numeric']):.1e}"


def geodesics():
    ratios = geodesic_ratios()
    growth = float(np.max(ratios[1:] / ratios[0]))
    return bool(np.all(np.isfinite(ratios)) and growth < 2.0), f"max |defect|/s^3 {ratios.max():.3f}, growth {growth:.3f}"


CRITERIA = [
    ("roots", roots),
    ("wronskian", wronskian),
    ("toeplitz_and_trig_balance", toeplitz_trig),
    ("mode0_oracle", mode0),
    ("cylinder_limit", cylinder),
    ("matching_solve", matching),
    ("topology", topology),
    ("residual_decay", residual_decay),
    ("cone_slopes", cone_slopes),
    ("geodesic_cubic_bound", geodesics),
]


def evaluate(name, fn) -> tuple[bool, str]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed criterion
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail} [{dt:.1f}s]"
    print(line)
    return bool(ok), line


@pytest.mark.parametrize("name,fn", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(name, fn, acceptance_lines):
    ok, line = evaluate(name, fn)
    acceptance_lines.append(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(name, fn)[0] for name, fn in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    raise SystemExit(0 if all(results) else 1)
