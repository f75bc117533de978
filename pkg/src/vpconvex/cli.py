"""Command-line scenario runner.

    vpconvex CONFIG.json [--mode-override MODE] [--out-dir DIR] [--workers N] [--seed S]

Exit status: 0 success, 1 bad configuration or input, 2 an invariant check
failed, 3 a numerical solve failed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import kernels
from .dynamics import (
    dalpha_dt_check,
    grazing_launch,
    integrate_trajectory,
    velocity_lemma_ratio,
)
from .errors import BandExit, ConfigError, InvariantViolation, NoConvergence, SolverError, VPError
from .field.analytic import BallLinearField, BallUniformField, ZeroField
from .field.diagnostics import boundary_decay_scan, solver_noise_level
from .field.grid import Grid
from .field.io import dump_grid_field
from .field.poisson import DensityGrid, solve_poisson
from .geometry import Ball, make_domain
from .kinetic import InitialData, Scenario, picard_run, self_consistent_run, write_diagnostics_csv

log = logging.getLogger("vpconvex")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_SOLVER = 0, 1, 2, 3
OUT_DIR_ENV = "VPCONVEX_OUT_DIR"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


# -- builders ------------------------------------------------------------------

def build_domain(cfg):
    d = cfg.domain
    params = {"center": d.center}
    if d.kind == "ball":
        params["radius"] = d.radius
    elif d.kind == "ellipsoid":
        params["semi_axes"] = d.semi_axes
    else:
        params["terms"] = d.terms
    try:
        return make_domain(d.kind, **params)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"domain: {exc}") from exc


def build_grid(cfg, domain):
    g = cfg.grid
    return Grid(domain, h=g.h) if g.h is not None else Grid(domain, cells=int(g.cells))


def build_initial(cfg, domain) -> InitialData:
    i = cfg.initial
    kw = {f.name: getattr(i, f.name) for f in dataclasses.fields(i) if f.name not in ("seed", "N")}
    for key in ("x_center", "v_center"):
        kw[key] = tuple(kw[key])
    try:
        return InitialData(domain=domain, **kw)
    except ValueError as exc:
        raise ConfigError(f"initial: {exc}") from exc


def build_field(kind: str, domain, rho0: float, cfg=None):
    if kind == "zero":
        return ZeroField(domain)
    if kind == "ball-uniform":
        if not isinstance(domain, Ball):
            raise ConfigError("field 'ball-uniform' needs a ball domain")
        return BallUniformField(domain.radius, rho0, domain.center)
    if kind == "uniform":
        grid = build_grid(cfg, domain)
        rho = DensityGrid(grid, np.full(grid.size, rho0))
        return solve_poisson(rho, tol=cfg.grid.tol, preconditioner=cfg.grid.preconditioner)
    raise ConfigError(f"unknown field kind {kind!r}")


def build_scenario(cfg) -> Scenario:
    domain = build_domain(cfg)
    return Scenario(
        data=build_initial(cfg, domain),
        grid=build_grid(cfg, domain),
        N=int(cfg.initial.N),
        seed=int(cfg.initial.seed),
        tol=cfg.grid.tol,
        preconditioner=cfg.grid.preconditioner,
        workers=cfg.workers,
        ceiling=cfg.blowup_ceiling,
    )


def _cfl_advisory(cfg, sc: Scenario):
    Q0 = sc.data.speed_bound()
    if Q0 > 0 and cfg.time.dt >= 0.5 * sc.grid.h / Q0:
        warnings.warn(f"dt = {cfg.time.dt:g} exceeds the advisory 0.5 h / Q(0) = {0.5 * sc.grid.h / Q0:.3g}")


# -- modes -------------------------------------------------------------------------

def mode_poisson_test(cfg, out: Path) -> dict:
    domain = build_domain(cfg)
    pt = cfg.poisson_test
    if pt.density == "uniform":
        if not isinstance(domain, Ball):
            raise ConfigError("poisson-test needs a ball domain for its analytic oracle")
        oracle = BallUniformField(domain.radius, 1.0, domain.center)
    elif pt.density == "linear":
        if not (isinstance(domain, Ball) and domain.radius == 1.0 and np.allclose(domain.center, 0)):
            raise ConfigError("poisson-test density 'linear' needs the unit ball at the origin")
        oracle = BallLinearField(0)
    else:
        raise ConfigError(f"poisson_test.density: unknown {pt.density!r}")
    rows, errs = [], []
    for h in sorted(pt.hs, reverse=True):
        grid = Grid(domain, h=h)
        phi = solve_poisson(DensityGrid.from_function(grid, oracle.density), tol=cfg.grid.tol,
                            preconditioner=cfg.grid.preconditioner)
        X = grid.node_coords[grid.interior_idx]
        err = float(np.max(np.abs(phi.interior_phi - oracle.potential(X))))
        order = math.log(errs[-1][1] / err, errs[-1][0] / h) if errs else math.nan
        errs.append((h, err))
        rows.append((h, err, order, phi.iterations, phi.residual))
    write_csv(out / "poisson_convergence.csv", ["h", "linf_error", "observed_order", "iterations", "residual"], rows)
    orders = [r[2] for r in rows[1:]]
    if orders and min(orders) < pt.min_order:
        raise InvariantViolation(f"observed order {min(orders):.3f} below {pt.min_order}")
    return {"errors": [r[1] for r in rows], "orders": orders}


def mode_trajectory(cfg, out: Path) -> dict:
    domain = build_domain(cfg)
    tb = cfg.trajectory
    fld = build_field(tb.field, domain, tb.rho0, cfg)
    tr = integrate_trajectory(tb.x0, tb.v0, fld, cfg.time.dt, cfg.time.T if tb.max_reflections is None else None,
                              domain=domain, max_reflections=tb.max_reflections)
    tr.to_csv(out / "trajectory.csv", fld)
    write_csv(
        out / "reflections.csv",
        ["s", "X1", "X2", "X3", "Vin1", "Vin2", "Vin3", "Vout1", "Vout2", "Vout3", "grazing"],
        [(e.time, *e.point, *e.v_in, *e.v_out, e.grazing) for e in tr.events],
    )
    H = tr.energy(fld)
    return {"reflections": int(tr.reflections[-1]), "energy_drift": float(np.max(np.abs(H - H[0])))}


def mode_velocity_lemma(cfg, out: Path) -> dict:
    domain = build_domain(cfg)
    vb = cfg.velocity_lemma
    fld = build_field(vb.field, domain, vb.rho0, cfg)
    rows = []
    bad = []
    for depth in vb.depths:
        x_perp0 = depth * domain.L / 2.0
        x0, v0 = grazing_launch(domain, x_perp0, vb.speed)
        for dt in vb.dts:
            tr = integrate_trajectory(x0, v0, fld, dt, domain=domain, max_reflections=vb.reflections)
            rep = velocity_lemma_ratio(tr, fld)
            quot = dalpha_dt_check(tr, fld)
            rows.append((x_perp0, dt, rep.alpha_ratio, rep.q_ratio, rep.reflections, quot))
            if not (math.isfinite(rep.q_ratio) and math.isfinite(rep.alpha_ratio) and math.isfinite(quot)):
                bad.append((x_perp0, dt))
    write_csv(out / "velocity_lemma.csv",
              ["x_perp0", "dt", "alpha_ratio", "q_ratio", "reflections", "dalpha_quotient"], rows)
    if bad:
        raise InvariantViolation(f"non-finite Velocity-Lemma ratio for {bad}")
    return {"trajectories": len(rows)}


def _scan_density(kind: str, axis: int):
    if kind == "linear":
        return lambda x: 1.0 + x[:, axis]
    if kind == "uniform":
        return lambda x: np.ones(len(x))
    raise ConfigError(f"decay_scan.density: unknown {kind!r}")


def mode_decay_scan(cfg, out: Path) -> dict:
    domain = build_domain(cfg)
    db = cfg.decay_scan
    scan = boundary_decay_scan(_scan_density(db.density, db.axis), domain, h=db.h, point=db.point, d0=db.d0,
                               levels=db.levels, tol=min(cfg.grid.tol, 1e-12),
                               preconditioner=cfg.grid.preconditioner)
    fit = scan.tangential_fit
    env = fit.envelope(scan.d) if fit else np.zeros(len(scan.d))
    write_csv(out / "decay_scan.csv", ["d", "dphi_dtau1", "dphi_dtau2", "dphi_dt", "envelope"],
              [(*row, e) for row, e in zip(scan.rows(), env)])
    summary = {
        "point": scan.point.tolist(),
        "noise_level": solver_noise_level(scan),
        "fit": dataclasses.asdict(fit) if fit else None,
    }
    write_json(out / "decay_fit.json", summary)
    return summary


def mode_picard(cfg, out: Path) -> dict:
    sc = build_scenario(cfg)
    _cfl_advisory(cfg, sc)
    res = picard_run(sc, cfg.time.T, cfg.time.dt, cfg.picard.n_max, cfg.picard.tol)
    res.to_json(out / "picard_summary.json")
    write_diagnostics_csv(out / "diagnostics.csv", res.final.records)
    if not res.converged:
        raise NoConvergence(f"Picard iteration did not reach tol {cfg.picard.tol:g} in {cfg.picard.n_max} iterates")
    return {"deltas": res.deltas, "converged": res.converged}


def mode_run(cfg, out: Path) -> dict:
    sc = build_scenario(cfg)
    _cfl_advisory(cfg, sc)
    res = self_consistent_run(sc, cfg.time.T, cfg.time.dt)
    write_diagnostics_csv(out / "diagnostics.csv", res.records)
    if cfg.dump_fields:
        from .kinetic import deposit

        rho = deposit(res.ensemble, sc.grid, time=cfg.time.T)
        phi = sc.solve(rho)
        dump_grid_field(out / "rho", rho.values, sc.grid, cfg.time.T, "rho")
        dump_grid_field(out / "phi", phi.phi, sc.grid, cfg.time.T, "phi")
    bad = [r.t for r in res.records if not r.rho_bound_ok]
    if bad:
        raise InvariantViolation(f"density bound exceeded at t = {bad[0]:g}")
    E = res.series("total_energy")
    return {"steps": len(res.records) - 1, "energy_drift": float(abs(E[-1] - E[0]) / max(abs(E[0]), 1e-300))}


MODE_HANDLERS = {
    "poisson-test": mode_poisson_test,
    "trajectory": mode_trajectory,
    "velocity-lemma": mode_velocity_lemma,
    "decay-scan": mode_decay_scan,
    "picard": mode_picard,
    "run": mode_run,
}


def resolve(args) -> "cfgmod.RunConfig":
    cfg = cfgmod.load(args.config)
    if args.mode_override:
        cfg.mode = args.mode_override
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.initial.seed = args.seed
    if args.out_dir:
        cfg.output_dir = args.out_dir
    elif os.environ.get(OUT_DIR_ENV):
        cfg.output_dir = os.environ[OUT_DIR_ENV]
    cfgmod.validate(cfg)
    return cfg


def run(cfg) -> int:
    """Execute a resolved configuration; returns the exit status."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "backend": kernels.BACKEND, "status": None, "result": None}
    status = EXIT_OK
    try:
        manifest["result"] = MODE_HANDLERS[cfg.mode](cfg, out)
    except (InvariantViolation, BandExit) as exc:
        status, manifest["error"] = EXIT_INVARIANT, f"{type(exc).__name__}: {exc}"
    except (SolverError, NoConvergence) as exc:
        status, manifest["error"] = EXIT_SOLVER, f"{type(exc).__name__}: {exc}"
    except (ConfigError, VPError) as exc:
        status, manifest["error"] = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    manifest["status"] = status
    write_json(out / "manifest.json", _jsonable(manifest))
    if status:
        log.error(manifest["error"])
    return status


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpconvex", description="Vlasov-Poisson scenarios in convex domains")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--mode-override", choices=cfgmod.MODES)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
