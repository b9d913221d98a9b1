"""Parameter layer of the stacking construction.

Levels are labelled ``j = -J, ..., J`` and interfaces between consecutive
levels ``l = -J + 1/2, ..., J - 1/2``.  Half-integers are stored doubled
(``two_j = 2 j``) so that all indices are plain integers.

The unknowns are the unbalancing parameters ``(zeta, zeta_i, zeta', zeta'_i)``
and the bridge tilts ``(kappa_perp_l, kappa_l)`` for ``l > 0``; together
there are ``4 J`` of them.  The derived bridge data (radii ``r_l``, waists
``tau_l``, heights ``h_l``) follow closed formulas.  The mismatches of the
per-level LD solutions are extracted numerically and driven to zero by a
quasi-Newton iteration whose linear part is the explicit leading-order
map ``A``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ld, rld

__all__ = [
    "interfaces",
    "levels",
    "sgn_interface",
    "zeta_indices",
    "kappa_indices",
    "ParamVector",
    "DerivedParams",
    "derive_params",
    "toeplitz_eigs",
    "trig_balance_check",
    "equation_keys",
    "predicted_mismatch",
    "waist_ratios",
    "ZMap",
    "assemble_Z",
    "level_solution",
    "actual_mismatch",
    "NewtonResult",
    "ConvergenceError",
    "newton_solve",
    "DEFAULT_C1",
    "DEFAULT_ALPHA",
]

log = logging.getLogger(__name__)

DEFAULT_C1 = 50.0
DEFAULT_ALPHA = 0.05


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------


def _check_two_J(two_J: int) -> None:
    if int(two_J) != two_J or two_J < 1:
        raise ValueError("two_J must be a positive integer")


def interfaces(two_J: int) -> list[int]:
    """Doubled interface indices ``2l`` for ``l = -J+1/2, ..., J-1/2``."""
    _check_two_J(two_J)
    return list(range(-(two_J - 1), two_J, 2))


def levels(two_J: int) -> list[int]:
    """Doubled level indices ``2j`` for ``j = -J, ..., J``."""
    _check_two_J(two_J)
    return list(range(-two_J, two_J + 1, 2))


def sgn_interface(two_ell: int) -> int:
    """Lattice family of the bridges at interface ``l = two_ell / 2``.

    ``l mod 2`` for integer ``l`` and ``(l + 1/2) mod 2`` otherwise.
    """
    if two_ell % 2 == 0:
        return (two_ell // 2) % 2
    return ((two_ell + 1) // 2) % 2


def zeta_indices(two_J: int) -> list[int]:
    """Doubled indices ``2i`` of the ``zeta_i`` and ``zeta'_i`` (``0 < i <= J-1``)."""
    _check_two_J(two_J)
    start = 1 if two_J % 2 else 2
    return list(range(start, two_J - 1, 2))


def kappa_indices(two_J: int) -> list[int]:
    """Doubled positive interface indices carrying a tilt."""
    return [e for e in interfaces(two_J) if e > 0]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    """Unbalancing parameters and tilts.

    Attributes
    ----------
    two_J : int
    zeta, zeta_prime : float
    zeta_i, zeta_prime_i : ndarray
        Indexed by :func:`zeta_indices`.
    kappa_perp, kappa : ndarray
        Indexed by :func:`kappa_indices`.
    """

    two_J: int
    zeta: float = 0.0
    zeta_i: np.ndarray = field(default=None)
    zeta_prime: float = 0.0
    zeta_prime_i: np.ndarray = field(default=None)
    kappa_perp: np.ndarray = field(default=None)
    kappa: np.ndarray = field(default=None)

    def __post_init__(self):
        nz = len(zeta_indices(self.two_J))
        nk = len(kappa_indices(self.two_J))
        for name, n in (("zeta_i", nz), ("zeta_prime_i", nz), ("kappa_perp", nk), ("kappa", nk)):
            val = getattr(self, name)
            arr = np.zeros(n) if val is None else np.asarray(val, dtype=float).copy()
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, two_J: int) -> "ParamVector":
        return cls(two_J)

    @staticmethod
    def size(two_J: int) -> int:
        return 2 + 2 * len(zeta_indices(two_J)) + 2 * len(kappa_indices(two_J))

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [[self.zeta], self.zeta_i, [self.zeta_prime], self.zeta_prime_i, self.kappa_perp, self.kappa]
        )

    @classmethod
    def from_array(cls, two_J: int, arr) -> "ParamVector":
        arr = np.asarray(arr, dtype=float)
        nz = len(zeta_indices(two_J))
        nk = len(kappa_indices(two_J))
        if arr.shape != (cls.size(two_J),):
            raise ValueError("wrong parameter vector length")
        i = 0
        zeta = arr[i]
        i += 1
        zi = arr[i : i + nz]
        i += nz
        zp = arr[i]
        i += 1
        zpi = arr[i : i + nz]
        i += nz
        kp = arr[i : i + nk]
        i += nk
        k = arr[i : i + nk]
        return cls(two_J, float(zeta), zi, float(zp), zpi, kp, k)

    # -- indexed access with the boundary conventions ---------------------
    def zeta_at(self, two_i: int) -> float:
        """``zeta_i`` with ``zeta_0 = 0``, ``zeta_{-1/2} = -zeta_{1/2}``, ``zeta_J = 0``."""
        if two_i == 0 or two_i == self.two_J:
            return 0.0
        if two_i == -1:
            return -self.zeta_at(1)
        return float(self.zeta_i[zeta_indices(self.two_J).index(two_i)])

    def zeta_prime_at(self, two_i: int) -> float:
        return float(self.zeta_prime_i[zeta_indices(self.two_J).index(two_i)])

    def kappa_pair(self, two_ell: int) -> tuple[float, float]:
        """``(kappa_perp_l, kappa_l)`` extended oddly, zero at ``l = 0``."""
        if two_ell == 0:
            return 0.0, 0.0
        idx = kappa_indices(self.two_J)
        if two_ell > 0:
            i = idx.index(two_ell)
            return float(self.kappa_perp[i]), float(self.kappa[i])
        kp, k = self.kappa_pair(-two_ell)
        return -kp, -k

    def norms(self) -> tuple[float, float]:
        """``(|zeta| + |zeta_i| + |zeta'| + |zeta'_i|, |kappa|)`` with max-norms for vectors."""

        def vmax(a):
            return float(np.max(np.abs(a))) if a.size else 0.0

        zn = abs(self.zeta) + vmax(self.zeta_i) + abs(self.zeta_prime) + vmax(self.zeta_prime_i)
        kn = max(vmax(self.kappa_perp), vmax(self.kappa))
        return zn, kn

    def in_ball(self, c1: float = DEFAULT_C1) -> bool:
        zn, kn = self.norms()
        return zn <= c1 and kn <= c1

    def to_dict(self) -> dict:
        half = lambda e: e / 2.0  # noqa: E731
        zi = zeta_indices(self.two_J)
        ki = kappa_indices(self.two_J)
        return {
            "two_J": self.two_J,
            "zeta": self.zeta,
            "zeta_i": {str(half(e)): float(v) for e, v in zip(zi, self.zeta_i)},
            "zeta_prime": self.zeta_prime,
            "zeta_prime_i": {str(half(e)): float(v) for e, v in zip(zi, self.zeta_prime_i)},
            "kappa_perp": {str(half(e)): float(v) for e, v in zip(ki, self.kappa_perp)},
            "kappa": {str(half(e)): float(v) for e, v in zip(ki, self.kappa)},
        }


@dataclass(frozen=True)
class DerivedParams:
    """Bridge data derived from a :class:`ParamVector`.

    Dictionaries are keyed by the doubled interface index.
    """

    two_J: int
    m: int
    r: dict
    tau: dict
    h: dict
    phi_J: float
    delta: float
    delta_prime: dict
    alpha: float

    def level(self, two_j: int):
        """``(tau_plus, tau_minus, h_plus, h_minus, ell_plus, ell_minus)`` of a level.

        ``ell_plus`` is the interface below the level, ``ell_minus`` the one
        above; a missing side has ``None`` index and zero data.
        """
        lp = two_j - 1 if two_j > -self.two_J else None
        lm = two_j + 1 if two_j < self.two_J else None
        tp = self.tau[lp] if lp is not None else 0.0
        tm = self.tau[lm] if lm is not None else 0.0
        hp = self.h[lp] if lp is not None else 0.0
        hm = self.h[lm] if lm is not None else 0.0
        return tp, tm, hp, hm, lp, lm

    def lattice(self, two_ell: int) -> ld.SingularLattice:
        return ld.SingularLattice(sgn_interface(two_ell), self.r[two_ell], self.m)

    def to_dict(self) -> dict:
        k = lambda e: str(e / 2.0)  # noqa: E731
        return {
            "two_J": self.two_J,
            "m": self.m,
            "phi_J": self.phi_J,
            "delta": self.delta,
            "alpha": self.alpha,
            "r": {k(e): v for e, v in self.r.items()},
            "tau": {k(e): v for e, v in self.tau.items()},
            "h": {k(e): v for e, v in self.h.items()},
            "delta_prime": {k(e): v for e, v in self.delta_prime.items()},
        }


def derive_params(pv: ParamVector, m: int, alpha: float = DEFAULT_ALPHA) -> DerivedParams:
    """Radii, waists and heights of the bridges.

    Raises
    ------
    ValueError
        If some ``r_l`` leaves the admissible radial window.
    """
    two_J = pv.two_J
    if m < 2:
        raise ValueError("m must be at least 2")
    r_top = rld.h_hat_inv(pv.zeta_prime / m)
    zi = zeta_indices(two_J)
    lo, hi = rld.admissible_window()
    r = {}
    for e in interfaces(two_J):
        corr = sum(pv.zeta_prime_at(i) for i in zi if i >= abs(e) + 1)
        r[e] = r_top - 4.0 * r_top**2 * corr / m**2
        if not (lo < r[e] < hi):
            raise ValueError(f"r_{e / 2} = {r[e]} outside the admissible window ({lo}, {hi})")
    phi_J = rld.phi_one(r_top, m)
    denom = 2 * two_J / 2.0 + 1.0  # 2J + 1
    base = (math.cos(math.pi / denom) - 1.0) * phi_J + pv.zeta
    tau = {}
    for e in interfaces(two_J):
        s = sum(pv.zeta_at(i) for i in zi if i <= abs(e) - 1)
        tau[e] = math.cos(math.pi * (e / 2.0) / denom) / m * math.exp(base + s / phi_J)
    t = lambda e: tau.get(e, 0.0)  # noqa: E731  (tau := 0 out of range)
    h = {}
    top = two_J - 1
    for e in interfaces(two_J):
        if e == top:
            h[e] = t(two_J - 3) * phi_J / 2.0
        elif e == -top:
            h[e] = -t(two_J - 3) * phi_J / 2.0
        else:
            h[e] = (t(e - 2) - t(e + 2)) * phi_J / 2.0
    return DerivedParams(
        two_J=two_J,
        m=m,
        r=r,
        tau=tau,
        h=h,
        phi_J=phi_J,
        delta=ld.delta_of(m),
        delta_prime={e: tau[e] ** alpha for e in tau},
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# linear algebra facts
# ---------------------------------------------------------------------------


def toeplitz_eigs(N: int):
    """Eigenpairs of the ``N x N`` tridiagonal 0/1 matrix.

    Returns
    -------
    closed : tuple (eigenvalues, eigenvectors)
        ``2 cos(k pi / (N+1))`` and columns ``sin(j k pi / (N+1))``,
        sorted by decreasing eigenvalue.
    brute : tuple (eigenvalues, eigenvectors)
        From :func:`numpy.linalg.eigh` on the explicit matrix, same order.
    """
    if N < 1:
        raise ValueError("N must be positive")
    k = np.arange(1, N + 1)
    lam = 2.0 * np.cos(k * np.pi / (N + 1))
    j = np.arange(1, N + 1)[:, None]
    vec = np.sin(j * k[None, :] * np.pi / (N + 1))
    T = np.eye(N, k=1) + np.eye(N, k=-1)
    w, v = np.linalg.eigh(T)
    order = np.argsort(-w)
    return (lam, vec), (w[order], v[:, order])


def tridiagonal(N: int) -> np.ndarray:
    return np.eye(N, k=1) + np.eye(N, k=-1)


def trig_balance_check(two_J: int, two_j: int) -> float:
    """Residual of the three-term cosine identity behind vertical balancing."""
    d = two_J + 1.0
    j = two_j / 2.0
    lhs = math.cos(math.pi / d)
    rhs = (math.cos(math.pi * (j - 1.5) / d) + math.cos(math.pi * (j + 0.5) / d)) / (
        2.0 * math.cos(math.pi * (j - 0.5) / d)
    )
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# leading-order mismatch map
# ---------------------------------------------------------------------------


def equation_keys(two_J: int) -> list[tuple[int, int]]:
    """Independent mismatch slots ``(two_j, side)`` with ``side = +1 / -1``.

    ``(j, +)`` for ``0 <= j <= J`` and ``(j, -)`` for ``0 < j <= J-1``; the
    remaining slots follow from ``nu_{-j, -+} = -nu_{j, +-}``.
    """
    keys = [(tj, +1) for tj in levels(two_J) if tj >= 0]
    keys += [(tj, -1) for tj in levels(two_J) if 0 < tj < two_J]
    return keys


def waist_ratios(dp: DerivedParams) -> dict:
    """``tau_{j,-+} / tau_{j,+-}`` for every slot with ``j >= 0`` and two lattices."""
    out = {}
    for tj in levels(dp.two_J):
        if tj < 0 or tj == dp.two_J:
            continue
        tp, tm, *_ = dp.level(tj)
        out[(tj, 1)] = tm / tp
        out[(tj, -1)] = tp / tm
    return out


def predicted_mismatch(pv: ParamVector, ratios: Optional[dict] = None) -> dict:
    """Leading-order ``(nu, nu')`` for every slot ``(two_j, side)``.

    Slots with ``j < 0`` are filled by the symmetry ``nu_{-j,-+} = -nu_{j,+-}``.

    Parameters
    ----------
    pv : ParamVector
    ratios : dict, optional
        Waist ratios ``rho = tau_{j,-+} / tau_{j,+-}`` from :func:`waist_ratios`.
        When omitted every ratio is taken as 1, which reproduces the plain
        leading-order map.  Otherwise the radial part becomes
        ``+-zeta' (1 - rho) + rho zeta'_j``: the slopes ``m h_hat`` of the two
        lattices of a level cancel only when their waists agree.
    """
    two_J = pv.two_J
    d = two_J + 1.0
    c = lambda x: math.cos(math.pi * x / d)  # noqa: E731
    out = {}
    for tj in levels(two_J):
        if tj < 0:
            continue
        j = tj / 2.0
        for s in (+1, -1):
            if (s > 0 and tj == -two_J) or (s < 0 and tj == two_J):
                continue
            ell = tj - s  # doubled interface carrying this side
            kp, k = pv.kappa_pair(ell)
            rho = 1.0 if ratios is None or tj == two_J else ratios[(tj, s)]
            if tj == 0:
                nu = s * pv.zeta - s * c(1.5) / (2.0 * c(0.5)) * pv.zeta_at(2)
                nup = s * pv.zeta_prime * (1.0 - rho)
            else:
                hi = pv.zeta_at(tj + 1 - s)  # zeta_{j + 1/2 -+ 1/2}
                lo = pv.zeta_at(tj - 1 - s)  # zeta_{j - 1/2 -+ 1/2}
                nu = s * pv.zeta - s * (c(j + 1 - s / 2.0) * hi - c(j - 1 - s / 2.0) * lo) / (
                    2.0 * c(j - s / 2.0)
                )
                if tj == two_J:
                    nup = pv.zeta_prime
                else:
                    nup = s * pv.zeta_prime * (1.0 - rho) + rho * pv.zeta_prime_at(tj)
            out[(tj, s)] = (nu - kp, nup - k)
    for (tj, s), (a, b) in list(out.items()):
        if tj > 0 and (-tj, -s) not in out:
            out[(-tj, -s)] = (-a, -b)
    return out


def _flatten(two_J: int, table: dict) -> np.ndarray:
    keys = equation_keys(two_J)
    return np.array([table[k][0] for k in keys] + [table[k][1] for k in keys])


@dataclass(frozen=True)
class ZMap:
    """The matrix ``A`` of the leading-order map and its inverse ``Z``."""

    two_J: int
    A: np.ndarray
    Z: np.ndarray
    condition: float

    def apply(self, residual: np.ndarray) -> np.ndarray:
        return self.Z @ residual


def assemble_Z(two_J: int, ratios: Optional[dict] = None) -> ZMap:
    """Assemble ``A`` column by column and invert it.

    ``ratios`` is passed to :func:`predicted_mismatch`.

    Raises
    ------
    np.linalg.LinAlgError
        If ``A`` is numerically singular.
    """
    _check_two_J(two_J)
    if two_J > 20:
        raise ValueError("J <= 10 is required")
    n = ParamVector.size(two_J)
    A = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        A[:, i] = _flatten(two_J, predicted_mismatch(ParamVector.from_array(two_J, e), ratios))
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"A is numerically singular (condition {cond:.3e})")
    Z = np.linalg.inv(A)  # LU with partial pivoting
    return ZMap(two_J, A, Z, cond)


# ---------------------------------------------------------------------------
# actual mismatches
# ---------------------------------------------------------------------------


def level_solution(dp: DerivedParams, two_j: int, n_modes: int = ld.DEFAULT_N_MODES) -> ld.LdSolution:
    """``phi_j = tau_{j,+} Phi_{j,+} - tau_{j,-} Phi_{j,-}``."""
    tp, tm, _, _, lp, lm = dp.level(two_j)
    lat_p = dp.lattice(lp) if lp is not None else None
    lat_m = dp.lattice(lm) if lm is not None else None
    return ld.build_ld(lat_p, lat_m, tp, tm, n_modes=n_modes)


def actual_mismatch(pv: ParamVector, dp: DerivedParams, n_modes: int = ld.DEFAULT_N_MODES) -> dict:
    """Extracted ``(mu - kappa_perp, mu' - kappa)`` for the independent slots."""
    out = {}
    sols = {}
    for tj, s in equation_keys(pv.two_J):
        if tj not in sols:
            sols[tj] = level_solution(dp, tj, n_modes)
        tp, tm, hp, hm, lp, lm = dp.level(tj)
        side = "plus" if s > 0 else "minus"
        h = hp if s > 0 else hm
        ell = lp if s > 0 else lm
        mis = ld.extract_affine(sols[tj], side, 0, h)
        kp, k = pv.kappa_pair(ell)
        out[(tj, s)] = (mis.mu - kp, mis.mu_prime - k)
    return out


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------


class ConvergenceError(RuntimeError):
    """Raised when the matching iteration fails; carries the residual trace."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class NewtonResult:
    pv: ParamVector
    derived: DerivedParams
    history: list
    mismatches: dict
    iterations: int
    condition: float

    @property
    def residual(self) -> float:
        return self.history[-1]

    def to_dict(self) -> dict:
        return {
            "params": self.pv.to_dict(),
            "derived": self.derived.to_dict(),
            "residual_history": list(self.history),
            "iterations": self.iterations,
            "condition_A": self.condition,
            "mismatches": {
                f"{tj / 2.0},{'+' if s > 0 else '-'}": {"mu": v[0], "mu_prime": v[1]}
                for (tj, s), v in sorted(self.mismatches.items())
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)


def _residual(table: dict) -> float:
    mu = max(abs(v[0]) for v in table.values())
    mup = max(abs(v[1]) for v in table.values())
    return mu + mup


def newton_solve(
    two_J: int,
    m: int,
    pv0: Optional[ParamVector] = None,
    tol: float = 1e-6,
    max_iter: int = 20,
    c1: float = DEFAULT_C1,
    alpha: float = DEFAULT_ALPHA,
    n_modes: int = ld.DEFAULT_N_MODES,
    linear_map: str = "refined",
) -> NewtonResult:
    """Zero the mismatches by ``pv <- pv - Z(mismatch)``.

    A full step is taken; if the residual grows it is halved up to four
    times.

    Parameters
    ----------
    linear_map : {"refined", "leading"}
        ``"leading"`` uses the plain leading-order map for ``Z``;
        ``"refined"`` rebuilds it each step with the current waist ratios.

    Raises
    ------
    ConvergenceError
        If the residual does not reach ``tol`` within ``max_iter`` steps or
        the parameters leave the ball of radius ``c1``.
    """
    if linear_map not in ("refined", "leading"):
        raise ValueError("linear_map must be 'refined' or 'leading'")
    zmap = assemble_Z(two_J)
    pv = pv0 if pv0 is not None else ParamVector.zeros(two_J)
    if pv.two_J != two_J:
        raise ValueError("pv0 has the wrong J")
    if not pv.in_ball(c1):
        raise ConvergenceError("initial parameters outside the admissible ball", [])
    dp = derive_params(pv, m, alpha)
    table = actual_mismatch(pv, dp, n_modes)
    res = _residual(table)
    history = [res]
    log.info("iteration 0: residual %.3e", res)
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"no convergence in {max_iter} iterations (residual {res:.3e})", history)
        if linear_map == "refined":
            zmap = assemble_Z(two_J, waist_ratios(dp))
        step = zmap.apply(_flatten(two_J, table))
        x = pv.to_array()
        for _halving in range(5):
            trial = ParamVector.from_array(two_J, x - step)
            if not trial.in_ball(c1):
                raise ConvergenceError("parameters left the admissible ball", history)
            try:
                dp_t = derive_params(trial, m, alpha)
            except ValueError as exc:
                raise ConvergenceError(str(exc), history) from exc
            table_t = actual_mismatch(trial, dp_t, n_modes)
            res_t = _residual(table_t)
            if res_t < res:
                break
            step = 0.5 * step
        pv, dp, table, res = trial, dp_t, table_t, res_t
        it += 1
        history.append(res)
        log.info("iteration %d: residual %.3e", it, res)
    return NewtonResult(pv, dp, history, table, it, zmap.condition)
