"""Command line interface.

Commands
--------
``roots``    distinguished radii and the Wronskian table.
``balance``  matching solve; writes the parameters and residual history.
``surface``  initial surface mesh plus topology, residual and cone reports.
``check``    invariant suite with a JUnit-style XML report.

Every command takes ``--config <json>`` plus flag overrides, echoes the
resolved configuration into each artifact it writes, and is deterministic.
Exit codes: 0 success, 1 failed check or non-convergence, 2 invalid
configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import sys
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import __version__, balance, checks, geometry, ld, mesh, rld

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


class ConfigError(click.ClickException):
    """Invalid configuration; exits with code 2."""

    exit_code = EXIT_CONFIG


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration.

    Attributes
    ----------
    two_J : int
        Twice the top level index; the surface has ``two_J + 1`` levels.
    m : int
        Number of bridges per interface.
    alpha, c1 : float
        Gluing exponent and radius of the admissible parameter ball.
    N_modes : int
        Angular modes kept in LD solutions.
    tol : float
        Matching tolerance on the combined mismatch.
    max_iter : int
    resolution : int
        Mesh resolution (multiple of 8, at least 16).
    R_out : float
        Radius of the outer truncation circles.
    output_dir : str
    seed_pv : list of float or None
        Initial parameter vector in :meth:`ParamVector.to_array` order.
    shrink_waists : bool
        Draw reduced bridge waists when the solved ones would collide.
    """

    two_J: int = 1
    m: int = 64
    alpha: float = balance.DEFAULT_ALPHA
    c1: float = balance.DEFAULT_C1
    N_modes: int = ld.DEFAULT_N_MODES
    tol: float = 1e-6
    max_iter: int = 20
    resolution: int = 16
    R_out: float = geometry.DEFAULT_R_OUT
    output_dir: str = "out"
    seed_pv: Optional[list] = field(default=None)
    shrink_waists: bool = False

    def validate(self) -> None:
        """Raise :class:`ConfigError` unless the invariants hold."""
        if not isinstance(self.two_J, int) or self.two_J < 1:
            raise ConfigError("two_J must be an integer >= 1")
        if not isinstance(self.m, int) or self.m < 2:
            raise ConfigError("m must be an integer >= 2")
        if not (0.0 < self.alpha <= 0.2):
            raise ConfigError("alpha must lie in (0, 0.2]")
        if not self.tol > 0.0:
            raise ConfigError("tol must be positive")
        if self.c1 <= 0.0:
            raise ConfigError("c1 must be positive")
        if not isinstance(self.N_modes, int) or self.N_modes < 8:
            raise ConfigError("N_modes must be an integer >= 8")
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            raise ConfigError("max_iter must be a positive integer")
        if not isinstance(self.resolution, int) or self.resolution < 16 or self.resolution % 8:
            raise ConfigError("resolution must be a multiple of 8 and at least 16")
        if self.R_out <= 5.0:
            raise ConfigError("R_out must exceed 5")
        if self.seed_pv is not None and len(self.seed_pv) != balance.ParamVector.size(self.two_J):
            raise ConfigError(f"seed_pv must have length {balance.ParamVector.size(self.two_J)}")

    @classmethod
    def load(cls, path: Optional[str], **overrides) -> "RunConfig":
        """Read a JSON config file (optional) and apply non-``None`` overrides."""
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def seed(self) -> Optional[balance.ParamVector]:
        if self.seed_pv is None:
            return None
        return balance.ParamVector.from_array(self.two_J, self.seed_pv)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    """Make ``obj`` JSON serialisable (numpy scalars, tuples, dict keys)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(doc: dict) -> str:
    """Schema-stable JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _document(command: str, cfg: Optional[RunConfig], body: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        **body,
    }


def _emit(ctx_json: bool, doc: dict, lines: list[str]) -> None:
    if ctx_json:
        click.echo(dumps(doc), nl=False)
    else:
        for line in lines:
            click.echo(line)


# ---------------------------------------------------------------------------
# command implementations (importable)
# ---------------------------------------------------------------------------


def roots_report() -> dict:
    """Roots, their checks and the Wronskian table."""
    rt = rld.find_roots()
    targets = {"r_m": 2.51, "r_u": 0.88, "r_mu": 1.52}
    rows = []
    for k in (0, 1, 2):
        basis = rld.phi_mu_basis(k)
        for r in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
            num = basis.wronskian_numeric(r)
            ref = basis.wronskian(r)
            rows.append({"k": k, "r": r, "numeric": num, "closed": ref, "rel_err": abs(num - ref) / abs(ref)})
    checks_ = [
        {"name": name, "value": getattr(rt, name), "target": t, "passed": abs(getattr(rt, name) - t) <= 0.01}
        for name, t in targets.items()
    ]
    checks_.append(
        {
            "name": "wronskian",
            "value": max(r["rel_err"] for r in rows),
            "target": 1e-8,
            "passed": max(r["rel_err"] for r in rows) < 1e-8,
        }
    )
    return {
        "roots": dataclasses.asdict(rt),
        "wronskian": rows,
        "checks": checks_,
        "passed": all(c["passed"] for c in checks_),
    }


def run_balance(cfg: RunConfig) -> balance.NewtonResult:
    return balance.newton_solve(
        cfg.two_J,
        cfg.m,
        pv0=cfg.seed(),
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        c1=cfg.c1,
        alpha=cfg.alpha,
        n_modes=cfg.N_modes,
    )


def _load_pv(out: Path, cfg: RunConfig) -> Optional[balance.ParamVector]:
    """Converged parameters from ``balance.json`` if it matches ``cfg``."""
    path = out / "balance.json"
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    old = doc.get("config") or {}
    keys = ("two_J", "m", "alpha", "N_modes", "tol")
    if any(old.get(k) != getattr(cfg, k) for k in keys) or not doc.get("converged"):
        return None
    return balance.ParamVector.from_array(cfg.two_J, doc["pv_array"])


def cone_csv(rows: list[dict], cfg: RunConfig) -> str:
    """CSV cone-slope table; the config is echoed in a leading comment line."""
    import io

    buf = io.StringIO()
    buf.write("# config " + json.dumps(_clean(cfg.to_dict()), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "closed", "numeric", "rel_diff", "flag"])
    for row in rows:
        w.writerow([row["j"], repr(row["closed"]), repr(row["numeric"]), repr(row["rel_diff"]), int(row["flag"])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# click commands
# ---------------------------------------------------------------------------


def _common(f):
    f = click.option("--json", "as_json", is_flag=True, help="Print a JSON document instead of text.")(f)
    f = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--m", "m", type=int, default=None, help="Bridges per interface.")(f)
    f = click.option("--two-J", "two_J", type=int, default=None, help="Twice the top level index.")(f)
    f = click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="JSON config file.")(f)
    return f


def _config(config, two_J, m, out, **extra) -> RunConfig:
    return RunConfig.load(config, two_J=two_J, m=m, output_dir=out, **extra)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="Log progress (-v info, -vv debug).")
def main(verbose: int) -> None:
    """Numerical construction of stacked-plane self-shrinkers."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_common
def roots(config, two_J, m, out, as_json) -> None:
    """Distinguished radii r_m, r_u, r_mu and the Wronskian check."""
    cfg = _config(config, two_J, m, out)
    rep = roots_report()
    doc = _document("roots", cfg, rep)
    if out is not None:
        _write(Path(cfg.output_dir) / "roots.json", dumps(doc))
    lines = [f"{c['name']:>10} = {c['value']:.6g}  {'PASS' if c['passed'] else 'FAIL'}" for c in rep["checks"]]
    _emit(as_json, doc, lines)
    sys.exit(EXIT_OK if rep["passed"] else EXIT_FAIL)


@main.command(name="balance")
@_common
def balance_cmd(config, two_J, m, out, as_json) -> None:
    """Solve the matching problem and write balance.json."""
    cfg = _config(config, two_J, m, out)
    out_dir = Path(cfg.output_dir)
    try:
        res = run_balance(cfg)
    except balance.ConvergenceError as exc:
        doc = _document(
            "balance",
            cfg,
            {"converged": False, "error": str(exc), "residual_history": exc.history, "trace": traceback.format_exc()},
        )
        _write(out_dir / "balance.json", dumps(doc))
        _emit(as_json, doc, [f"no convergence: {exc}"] + [f"  {i}: {r:.3e}" for i, r in enumerate(exc.history)])
        sys.exit(EXIT_FAIL)
    body = res.to_dict()
    body.update(converged=True, pv_array=res.pv.to_array(), residual=res.residual)
    doc = _document("balance", cfg, body)
    _write(out_dir / "balance.json", dumps(doc))
    lines = [f"iteration {i}: residual {r:.3e}" for i, r in enumerate(res.history)]
    lines += [f"tau_{k} = {v:.6g}   r_{k} = {res.derived.to_dict()['r'][k]:.6g}" for k, v in res.derived.to_dict()["tau"].items()]
    _emit(as_json, doc, lines)


@main.command()
@_common
@click.option("--resolution", type=int, default=None, help="Mesh resolution.")
@click.option("--shrink-waists", is_flag=True, default=None, help="Shrink colliding waists (topology only).")
@click.option("--no-residual", is_flag=True, help="Skip the residual report.")
def surface(config, two_J, m, out, as_json, resolution, shrink_waists, no_residual) -> None:
    """Build the initial surface; write OBJ, PLY and JSON/CSV reports."""
    cfg = _config(config, two_J, m, out, resolution=resolution, shrink_waists=shrink_waists)
    out_dir = Path(cfg.output_dir)
    pv = _load_pv(out_dir, cfg)
    if pv is None:
        try:
            res = run_balance(cfg)
        except balance.ConvergenceError as exc:
            raise click.ClickException(f"matching solve failed: {exc}") from exc
        pv = res.pv
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        data = geometry.prepare_surface(
            cfg.two_J, cfg.m, pv, n_modes=cfg.N_modes, alpha=cfg.alpha, R_out=cfg.R_out, shrink_waists=cfg.shrink_waists
        )
        surf = mesh.build_mesh(data, cfg.resolution)
        slopes = geometry.cone_slopes(data)
        resid = None if no_residual else geometry.residual_report(data, include_bridges=False)
    out_dir.mkdir(parents=True, exist_ok=True)
    surf.to_obj(out_dir / "surface.obj")
    surf.to_ply(out_dir / "surface.ply")
    topo = surf.summary()
    topo.update(
        expected_vertices=mesh.expected_vertex_count(surf.layout, cfg.two_J),
        symmetry_errors=mesh.symmetry_errors(surf),
        waist_scale={str(k / 2.0): v for k, v in data.waist_scale.items()},
    )
    topo["passed"] = bool(
        topo["watertight"]
        and topo["oriented"]
        and topo["genus"] == topo["expected_genus"]
        and topo["boundary_loops"] == cfg.two_J + 1
        and max(topo["symmetry_errors"].values()) < 1e-9
    )
    _write(out_dir / "topology.json", dumps(_document("surface", cfg, {"topology": topo})))
    if resid is not None:
        _write(out_dir / "residual.json", dumps(_document("surface", cfg, {"residual": resid})))
    _write(out_dir / "cone_slopes.csv", cone_csv(slopes, cfg))
    doc = _document("surface", cfg, {"topology": topo, "residual": resid, "cone_slopes": slopes})
    lines = [
        f"vertices {topo['vertices']}  triangles {topo['triangles']}",
        f"genus {topo['genus']} (expected {topo['expected_genus']})  boundary loops {topo['boundary_loops']}",
        f"watertight {topo['watertight']}  oriented {topo['oriented']}",
        f"symmetry error {max(topo['symmetry_errors'].values()):.2e}",
    ]
    lines += [f"cone slope j={r['j']}: closed {r['closed']:.6g} numeric {r['numeric']:.6g}" for r in slopes]
    _emit(as_json, doc, lines)
    sys.exit(EXIT_OK if topo["passed"] else EXIT_FAIL)


@main.command()
@_common
@click.option("--filter", "module", type=click.Choice(checks.MODULES), default=None, help="Run one module's checks.")
def check(config, two_J, m, out, as_json, module) -> None:
    """Run the invariant suite and write a JUnit XML report."""
    cfg = _config(config, two_J, m, out)
    results = checks.run(module)
    out_dir = Path(cfg.output_dir)
    _write(out_dir / "check.xml", checks.junit_xml(results, cfg.to_dict()))
    doc = _document("check", cfg, {"results": [r.to_dict() for r in results], "passed": all(r.passed for r in results)})
    _write(out_dir / "check.json", dumps(doc))
    lines = [r.line() for r in results]
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} passed")
    _emit(as_json, doc, lines)
    sys.exit(EXIT_OK if all(r.passed for r in results) else EXIT_FAIL)


if __name__ == "__main__":  # pragma: no cover
    main()
