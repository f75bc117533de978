"""Charge deposition, running speed bound and per-step diagnostics."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import kernels
from ..errors import NonpositiveMargin, ParticleOutside
from ..field.diagnostics import hopf_margin
from ..field.grid import Grid
from ..field.poisson import DensityGrid, PotentialField
from .initial import ParticleEnsemble

MASS_RTOL = 1e-10


def deposit(ensemble: ParticleEnsemble | np.ndarray, grid: Grid, weights=None, *, time: float = 0.0,
            workers: int = 1) -> DensityGrid:
    """Cloud-in-cell density; corner weight outside the domain folds onto the nearest interior node."""
    if isinstance(ensemble, ParticleEnsemble):
        X, w = ensemble.X, ensemble.w
    else:
        X, w = np.atleast_2d(ensemble), np.asarray(weights, dtype=float)
    dom = grid.domain
    if X.size and np.max(dom.phi(X)) > 10.0 * 1e-12 * dom.L:
        raise ParticleOutside(f"{int(np.sum(dom.phi(X) > 1e-11 * dom.L))} particle(s) outside the domain")
    sums, nbad = kernels.deposit(X, w, grid.origin, grid.h, grid.shape, grid.fold_target, workers=workers)
    if nbad:
        raise ParticleOutside(f"{nbad} particle(s) could not be deposited on the grid")
    rho = DensityGrid(grid, sums / grid.cell_volume, time)
    total = math.fsum(w)
    got = math.fsum(sums)
    if abs(got - total) > MASS_RTOL * max(abs(total), 1e-300):
        raise ParticleOutside(f"deposited mass {got!r} differs from particle weight {total!r}")
    return rho


class QTracker:
    """Running maximum of particle speed, ``Q(t) = sup_{s <= t} max |V(s)|``."""

    def __init__(self):
        self.value = 0.0
        self.history: list[float] = []

    def update(self, V, w=None) -> float:
        V = np.atleast_2d(V)
        if w is not None:
            V = V[np.asarray(w) > 0]
        if len(V):
            self.value = max(self.value, float(np.sqrt(np.max(np.einsum("ij,ij->i", V, V)))))
        self.history.append(self.value)
        return self.value


def q_tracker(velocity_history, weights=None) -> np.ndarray:
    tr = QTracker()
    for V in velocity_history:
        tr.update(V, weights)
    return np.array(tr.history)


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    kinetic_energy: float
    field_energy: float
    total_energy: float
    Q: float
    rho_max: float
    rho_53: float
    hopf_margin: float
    particle_mass: float = 0.0
    rho_bound: float = math.inf
    phi_sup: float = 0.0
    reflections: int = 0

    CSV_COLUMNS = ("t", "mass", "kinetic_energy", "field_energy", "total_energy", "Q", "rho_max", "rho_53",
                   "hopf_margin")

    @property
    def rho_bound_ok(self) -> bool:
        return self.rho_max <= self.rho_bound

    def as_dict(self) -> dict:
        return asdict(self)


def compute_diagnostics(t: float, ens: ParticleEnsemble, rho: DensityGrid, phi: PotentialField, q: QTracker,
                        f_max: float, *, hopf_band: float | None = None, reflections: int = 0,
                        slack: float = 1.1) -> DiagnosticsRecord:
    g = rho.grid
    r = rho.interior_values()
    mass = math.fsum(r) * g.cell_volume
    kinetic = math.fsum(ens.w * np.einsum("ij,ij->i", ens.V, ens.V))
    fe = phi.field_energy(rho)
    Q = q.update(ens.V, ens.w)
    rho53 = (math.fsum(r ** (5.0 / 3.0)) * g.cell_volume) ** 0.6 if r.size else 0.0
    dom = g.domain
    band = hopf_band if hopf_band is not None else min(max(4 * g.h, 0.05 * dom.L), dom.delta)
    try:
        eps0 = hopf_margin(phi, dom, band, n_boundary=200, n_depth=4) if mass > 0 else 0.0
    except NonpositiveMargin:
        eps0 = 0.0
    phi_sup = float(np.max(-phi.interior_phi)) if phi.interior_phi.size else 0.0
    return DiagnosticsRecord(
        t=t,
        mass=mass,
        kinetic_energy=kinetic,
        field_energy=fe,
        total_energy=kinetic + fe,
        Q=Q,
        rho_max=float(r.max()) if r.size else 0.0,
        rho_53=rho53,
        hopf_margin=eps0,
        particle_mass=ens.total_weight(),
        rho_bound=slack * 4.0 / 3.0 * math.pi * f_max * Q**3,
        phi_sup=phi_sup,
        reflections=reflections,
    )


def write_diagnostics_csv(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DiagnosticsRecord.CSV_COLUMNS)
        for rec in records:
            w.writerow([f"{getattr(rec, c):.17g}" for c in DiagnosticsRecord.CSV_COLUMNS])
    return path
