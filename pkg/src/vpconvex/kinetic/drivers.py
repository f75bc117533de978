"""Self-consistent time stepping and the frozen-field Picard iteration."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import Pusher
from ..errors import BlowupSuspected, EmptySupport, InvariantViolation, NoConvergence
from ..field.grid import Grid
from ..field.poisson import PotentialField, solve_poisson
from .ensemble import DiagnosticsRecord, QTracker, compute_diagnostics, deposit
from .initial import InitialData, ParticleEnsemble, sample_ensemble

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    """Everything a run needs besides the time horizon."""

    data: InitialData
    grid: Grid
    N: int = 10_000
    seed: int = 0
    tol: float = 1e-10
    preconditioner: str = "jacobi"
    workers: int = 1
    ceiling: float | str = "auto"
    hopf_band: float | None = None
    ensemble: ParticleEnsemble | None = None

    @property
    def domain(self):
        return self.grid.domain

    def initial_ensemble(self) -> ParticleEnsemble:
        if self.ensemble is not None:
            return self.ensemble.copy()
        try:
            ens = sample_ensemble(self.data, self.N, self.seed, self.domain)
        except EmptySupport:
            z = np.zeros((0, 3))
            ens = ParticleEnsemble(z, z.copy(), np.zeros(0), np.zeros(0), 0.0, self.seed)
        self.ensemble = ens
        return ens.copy()

    def solve(self, rho, guess=None) -> PotentialField:
        return solve_poisson(rho, tol=self.tol, x0=guess, preconditioner=self.preconditioner, workers=self.workers)


def _ceiling(sc: Scenario, Q0: float, phi_sup: float) -> float:
    if sc.ceiling == "auto":
        return 3.0 * Q0 + 3.0 * math.sqrt(phi_sup)
    return float(sc.ceiling)


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    ensemble: ParticleEnsemble
    reflections: int = 0
    ceiling: float = math.inf
    solver_iterations: list[int] = field(default_factory=list)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def self_consistent_run(sc: Scenario, T: float, dt: float, *, check_mass: bool = True, callback=None) -> RunResult:
    """Leapfrog loop: push with the current field, deposit, solve, close the kick."""
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    ens = sc.initial_ensemble()
    grid = sc.grid
    pusher = Pusher(grid.domain)
    f_max = sc.data.f_max()
    q = QTracker()
    rho = deposit(ens, grid, workers=sc.workers)
    phi = sc.solve(rho)
    A = phi.gradient(ens.X) if ens.N else np.zeros((0, 3))
    rec = compute_diagnostics(0.0, ens, rho, phi, q, f_max, hopf_band=sc.hopf_band)
    records = [rec]
    mass0 = rec.mass
    phi_sup = rec.phi_sup
    Q0 = rec.Q
    refl = 0
    iters = [phi.iterations]
    ceiling = _ceiling(sc, Q0, phi_sup)
    nsteps = int(round(T / dt))
    for k in range(nsteps):
        t = (k + 1) * dt
        if ens.N:
            res = pusher.open_step(ens.X, ens.V, A, dt, phi.gradient, k * dt)
            ens.X = res.X
            refl += int(res.reflections.sum())
        rho = deposit(ens, grid, time=t, workers=sc.workers)
        phi = sc.solve(rho, guess=phi)
        iters.append(phi.iterations)
        if ens.N:
            A = phi.gradient(ens.X)
            ens.V = Pusher.close_step(res, A)
        rec = compute_diagnostics(t, ens, rho, phi, q, f_max, hopf_band=sc.hopf_band, reflections=refl)
        records.append(rec)
        if check_mass and abs(rec.mass - mass0) > 1e-10 * max(mass0, 1e-300):
            raise InvariantViolation(f"mass drifted from {mass0!r} to {rec.mass!r} at t = {t:g}")
        phi_sup = max(phi_sup, rec.phi_sup)
        ceiling = _ceiling(sc, Q0, phi_sup)
        if rec.Q > ceiling:
            raise BlowupSuspected(f"Q(t) = {rec.Q:.6g} exceeds ceiling {ceiling:.6g} at t = {t:g}")
        if callback is not None:
            callback(k + 1, ens, rec)
    if not ens.weights_unchanged():
        raise InvariantViolation("particle weights changed during the run")
    return RunResult(records, ens, refl, ceiling, iters)


# -- Picard ------------------------------------------------------------------------

@dataclass
class PicardIterate:
    n: int
    delta: float
    Q: np.ndarray
    E_max_prev: float
    records: list[DiagnosticsRecord]

    def q_bound_ok(self, Q0: float, t: np.ndarray, slack: float = 1e-12) -> bool:
        """``Q^n(t) <= Q(0) + t max|E^{n-1}|``."""
        return bool(np.all(self.Q <= Q0 + t * self.E_max_prev + slack))


@dataclass
class PicardResult:
    iterates: list[PicardIterate]
    converged: bool
    times: np.ndarray
    Q0: float
    tol: float

    @property
    def deltas(self) -> list[float]:
        return [it.delta for it in self.iterates if it.n >= 1]

    @property
    def final(self) -> PicardIterate:
        return self.iterates[-1]

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "tol": self.tol,
            "Q0": self.Q0,
            "times": [float(t) for t in self.times],
            "iterates": [
                {"n": it.n, "delta": None if math.isnan(it.delta) else it.delta, "E_max_prev": it.E_max_prev, "Q": [float(x) for x in it.Q]}
                for it in self.iterates
            ],
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2) + "\n")
        return path


def _gradient_l2_diff(a: PotentialField, b: PotentialField) -> float:
    g = a.grid
    d = a.gradient_nodes[:, g.interior_idx] - b.gradient_nodes[:, g.interior_idx]
    return math.sqrt(math.fsum((d * d).ravel()) * g.cell_volume)


def _max_node_gradient(history) -> float:
    m = 0.0
    for f in history:
        G = f.gradient_nodes
        G = G[:, np.all(np.isfinite(G), axis=0)]
        if G.size:
            m = max(m, float(np.sqrt(np.max(np.sum(G * G, axis=0)))))
    return m


def picard_run(sc: Scenario, T: float, dt: float, n_max: int = 10, tol: float = 1e-3, *,
               raise_on_failure: bool = False) -> PicardResult:
    """Iterate ``f^n`` transported by the frozen field history of ``f^{n-1}``.

    Iterate 0 is ``f0`` itself for all times.  Each later iterate pushes the
    initial ensemble through the previous field history, depositing and
    solving at every step time to build its own history.  The change between
    successive histories is the supremum over step times of the grid-L2 norm
    of the field difference, relative to the L2 norm of the initial field.
    """
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    nsteps = int(round(T / dt))
    times = dt * np.arange(nsteps + 1)
    grid = sc.grid
    pusher = Pusher(grid.domain)
    f_max = sc.data.f_max()
    ens0 = sc.initial_ensemble()
    rho0 = deposit(ens0, grid, workers=sc.workers)
    phi0 = sc.solve(rho0)
    norm0 = phi0.gradient_l2()
    q0 = QTracker()
    rec0 = compute_diagnostics(0.0, ens0, rho0, phi0, q0, f_max, hopf_band=sc.hopf_band)
    Q0 = rec0.Q
    history = [phi0] * (nsteps + 1)
    iterates = [PicardIterate(0, math.nan, np.full(nsteps + 1, Q0), 0.0, [rec0] * (nsteps + 1))]
    converged = False
    for n in range(1, n_max + 1):
        ens = ens0.copy()
        q = QTracker()
        E_max = _max_node_gradient(history)
        new_hist = [phi0]
        records = [compute_diagnostics(0.0, ens, rho0, phi0, q, f_max, hopf_band=sc.hopf_band)]
        A = history[0].gradient(ens.X) if ens.N else np.zeros((0, 3))
        delta_abs = 0.0
        for k in range(nsteps):
            t = times[k + 1]
            if ens.N:
                res = pusher.open_step(ens.X, ens.V, A, dt, history[k].gradient, times[k])
                ens.X = res.X
                A = history[k + 1].gradient(ens.X)
                ens.V = Pusher.close_step(res, A)
            rho = deposit(ens, grid, time=t, workers=sc.workers)
            phi = sc.solve(rho, guess=history[k + 1])
            new_hist.append(phi)
            records.append(compute_diagnostics(t, ens, rho, phi, q, f_max, hopf_band=sc.hopf_band))
            delta_abs = max(delta_abs, _gradient_l2_diff(phi, history[k + 1]))
        delta = delta_abs / norm0 if norm0 > 0 else delta_abs
        iterates.append(PicardIterate(n, delta, np.array(q.history), E_max, records))
        log.info("picard iterate %d: delta = %.3e", n, delta)
        history = new_hist
        if delta <= tol:
            converged = True
            break
    result = PicardResult(iterates, converged, times, Q0, tol)
    if not converged and raise_on_failure:
        raise NoConvergence(f"no convergence after {n_max} iterates (last delta {result.deltas[-1]:.3e})", result)
    return result
