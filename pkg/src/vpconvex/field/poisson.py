"""Dirichlet Poisson solve ``lap phi = rho`` on the embedded-boundary grid.

Cut legs use the symmetric Shortley-Weller variant: the leg to the wall at
fraction ``theta`` of a cell contributes ``1/(theta h^2)`` to the diagonal and
the Dirichlet value 0 to the right-hand side.  The matrix is an SPD M-matrix,
so the discrete maximum principle holds and CG applies directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..errors import FieldEvalFailure, InvariantViolation, OutsideDomain, SolverDivergence
from ..geometry import BoundaryFrame
from .grid import AXIS_OFFSETS, Grid, default_iteration_cap


@dataclass
class DensityGrid:
    """Node densities (charge per volume); exterior nodes are zero."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError("density array does not match grid")
        self.values[~self.grid.interior] = 0.0

    @classmethod
    def from_function(cls, grid: Grid, func, time: float = 0.0) -> "DensityGrid":
        return cls(grid, grid.nodal_field(func), time)

    def total_mass(self) -> float:
        return math.fsum(self.values[self.grid.interior_idx]) * self.grid.cell_volume

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior_idx]


class PoissonOperator:
    """Assembled SPD matrix ``A = -lap_h`` over interior nodes of a grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        h2 = grid.h**2
        n = len(grid.interior_idx)
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        for a in range(6):
            nb = grid.neighbors[a]
            regular = nb >= 0
            diag += np.where(regular, 1.0, 1.0 / grid.theta[a]) / h2
            r = np.flatnonzero(regular)
            rows.append(r)
            cols.append(grid.unknown[nb[regular]])
            vals.append(np.full(len(r), -1.0 / h2))
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        self.diag = diag
        self._amg = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """Discrete Laplacian of a node field (Dirichlet zero at the wall)."""
        u = values[self.grid.interior_idx]
        out = np.zeros(self.grid.size)
        out[self.grid.interior_idx] = -(self.matrix @ u)
        return out

    def preconditioner(self, kind: str):
        if kind == "jacobi":
            inv = 1.0 / self.diag
            return lambda r: inv * r
        if kind == "amg":
            if self._amg is None:
                import pyamg

                self._amg = pyamg.smoothed_aggregation_solver(self.matrix, symmetry="symmetric")
            ml = self._amg
            return lambda r: ml.solve(r, x0=np.zeros_like(r), maxiter=1, cycle="V", tol=1e-300)
        raise ValueError(f"unknown preconditioner {kind!r}")


def pcg(A, b, x0=None, precond=None, tol=1e-10, maxiter=None):
    """Preconditioned conjugate gradients; returns (x, relative residual, iterations)."""
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    maxiter = maxiter or default_iteration_cap(n)
    M = precond or (lambda r: r)
    r = b - A @ x
    rel = float(np.linalg.norm(r)) / bnorm
    if rel <= tol:
        return x, rel, 0
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if not pAp > 0.0:
            raise SolverDivergence("operator lost positive definiteness")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            return x, rel, it
        z = M(r)
        rz_new = float(r @ z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise SolverDivergence(f"PCG reached {maxiter} iterations with relative residual {rel:.3e} > {tol:.1e}")


@dataclass
class FieldSample:
    """Field at a point, optionally decomposed in a boundary frame.

    ``E = E1*u1 + E2*u2 - E_perp*n``; ``sigma`` and ``F`` are the tangential
    and normal accelerations of the local characteristic system and need the
    local velocity.
    """

    E: np.ndarray
    E1: float | None = None
    E2: float | None = None
    E_perp: float | None = None
    sigma: np.ndarray | None = None
    F: float | None = None
    frame: BoundaryFrame | None = None

    def reconstruct(self) -> np.ndarray:
        fr = self.frame
        return self.E1 * fr.u1 + self.E2 * fr.u2 - self.E_perp * fr.normal


def local_forces(E_tan, E_perp, frame: BoundaryFrame, x_perp, w, v_perp):
    """``(sigma_1, sigma_2, F)`` for tangential field components ``E_tan`` at depth ``x_perp``.

    sigma_i = E_i + v_perp w_i k_i / m_i - sum_jl G^i_jl w_j w_l / m_j
    F       = E_perp + sum_j w_j^2 b_j / m_j,       m_i = 1 - k_i x_perp
    """
    k, b, G = frame.k, frame.b, frame.christoffel
    w = np.asarray(w, dtype=float)
    m = 1.0 - k * x_perp
    sigma = np.asarray(E_tan, dtype=float) + v_perp * w * k / m - np.einsum("ijl,j,l->i", G, w / m, w)
    F = E_perp + float(np.sum(w**2 * b / m))
    return sigma, F


@dataclass
class PotentialField:
    """Solved potential on a grid plus node gradients extended into the padding band."""

    grid: Grid
    phi: np.ndarray
    residual: float
    iterations: int = 0
    time: float = 0.0
    gradient_nodes: np.ndarray = field(init=False, repr=False)
    phi_nodes: np.ndarray = field(init=False, repr=False)
    workers: int = 1

    def __post_init__(self):
        g = self.grid
        self.phi = np.asarray(self.phi, dtype=float)
        self.phi[~g.interior] = 0.0
        self._nodal = np.ascontiguousarray(g.extend(np.vstack([node_gradient(g, self.phi), self.phi[None]])))
        self.gradient_nodes = self._nodal[:3]
        self.phi_nodes = self._nodal[3]

    @property
    def interior_phi(self) -> np.ndarray:
        return self.phi[self.grid.interior_idx]

    def _gather(self, x, comps):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out, nbad = kernels.gather(
            x, self.grid.origin, self.grid.h, self.grid.shape, self._nodal[comps], workers=self.workers
        )
        if nbad:
            raise FieldEvalFailure(f"{nbad} evaluation points fall outside the extended grid")
        return out

    def gradient(self, x) -> np.ndarray:
        return self._gather(x, slice(0, 3))

    def potential(self, x) -> np.ndarray:
        return self._gather(x, slice(3, 4))[:, 0]

    def field_energy(self, rho: DensityGrid) -> float:
        """``int |E|^2 dx`` via the discrete identity ``-sum phi rho h^3``."""
        g = self.grid
        return -math.fsum(self.phi[g.interior_idx] * rho.values[g.interior_idx]) * g.cell_volume

    def gradient_l2(self) -> float:
        g = self.grid
        G = self.gradient_nodes[:, g.interior_idx]
        return math.sqrt(math.fsum((G * G).ravel()) * g.cell_volume)


def node_gradient(grid: Grid, phi: np.ndarray, theta_min: float = 0.5) -> np.ndarray:
    """Gradient at interior nodes, one-sided toward cut points where phi = 0.

    When the wall sits closer than ``theta_min * h`` the centred-style formula
    amplifies round-off in ``phi`` near the wall, so the quadratic through the
    wall point and two nodes on the far side is used instead.
    """
    h = grid.h
    idx = grid.interior_idx
    p0 = phi[idx]
    ijk = grid.unflat(idx)
    out = np.full((3, grid.size), np.nan)
    for d in range(3):
        lo, hi = 2 * d, 2 * d + 1
        hm = grid.theta[lo] * h
        hp = grid.theta[hi] * h
        pm = np.where(grid.neighbors[lo] >= 0, phi[np.maximum(grid.neighbors[lo], 0)], 0.0)
        pp = np.where(grid.neighbors[hi] >= 0, phi[np.maximum(grid.neighbors[hi], 0)], 0.0)
        g = (hm**2 * (pp - p0) + hp**2 * (p0 - pm)) / (hm * hp * (hm + hp))
        for near, far, sgn in ((hi, lo, 1.0), (lo, hi, -1.0)):
            th = grid.theta[near]
            sel = np.flatnonzero((grid.neighbors[near] < 0) & (th < theta_min) & (grid.neighbors[far] >= 0))
            if sel.size == 0:
                continue
            n2 = ijk[sel] + 2 * AXIS_OFFSETS[far]
            ok = grid.in_bounds(n2)
            f2 = grid.flat(np.where(ok[:, None], n2, 0))
            ok &= grid.interior[f2]
            sel, f2 = sel[ok], f2[ok]
            # nodes at signed offsets s0 (wall, phi=0), s1 = -sgn h, s2 = -2 sgn h
            s0 = sgn * th[sel] * h
            s1 = -sgn * h
            s2 = -2.0 * sgn * h
            w1 = -(s0 + s2) / ((s1 - s0) * (s1 - s2))
            w2 = -(s0 + s1) / ((s2 - s0) * (s2 - s1))
            g[sel] = w1 * phi[grid.neighbors[far][sel]] + w2 * phi[f2]
        out[d, idx] = g
    return out


_OPERATORS: dict[int, PoissonOperator] = {}


def operator_for(grid: Grid) -> PoissonOperator:
    op = _OPERATORS.get(id(grid))
    if op is None or op.grid is not grid:
        op = PoissonOperator(grid)
        _OPERATORS.clear()
        _OPERATORS[id(grid)] = op
    return op


def solve_poisson(
    rho: DensityGrid,
    domain=None,
    tol: float = 1e-10,
    *,
    x0: PotentialField | np.ndarray | None = None,
    preconditioner: str = "jacobi",
    maxiter: int | None = None,
    check_max_principle: bool = True,
    workers: int = 1,
) -> PotentialField:
    """Solve ``lap phi = rho`` with ``phi = 0`` on the wall."""
    grid = rho.grid
    if domain is not None and domain is not grid.domain:
        raise ValueError("density grid belongs to a different domain")
    r = rho.interior_values()
    if r.size and r.min() < 0.0:
        raise ValueError("density must be nonnegative")
    op = operator_for(grid)
    guess = None
    if isinstance(x0, PotentialField):
        guess = x0.interior_phi
    elif x0 is not None:
        guess = np.asarray(x0)[grid.interior_idx]
    u, res, its = pcg(op.matrix, -r, guess, op.preconditioner(preconditioner), tol, maxiter)
    phi = np.zeros(grid.size)
    phi[grid.interior_idx] = u
    if check_max_principle and u.size:
        scale = float(np.abs(u).max())
        if u.max() > 10.0 * max(tol, 1e-14) * max(scale, 1e-300) + 1e-300:
            raise InvariantViolation(f"maximum principle violated: max phi = {u.max():.3e}")
    return PotentialField(grid, phi, res, its, rho.time, workers=workers)


def eval_field(phi: PotentialField, x, frame: BoundaryFrame | None = None, v=None) -> FieldSample:
    x = np.asarray(x, dtype=float).reshape(3)
    if phi.grid.domain.phi(x[None])[0] >= 0.0:
        raise OutsideDomain("field evaluation point is outside the domain")
    E = phi.gradient(x[None])[0]
    s = FieldSample(E=E)
    if frame is not None:
        s.frame = frame
        s.E1 = float(E @ frame.u1)
        s.E2 = float(E @ frame.u2)
        s.E_perp = float(-(E @ frame.normal))
        if v is not None:
            v = np.asarray(v, dtype=float)
            w = np.array([v @ frame.u1, v @ frame.u2])
            s.sigma, s.F = local_forces([s.E1, s.E2], s.E_perp, frame, frame.x_perp, w, float(-(v @ frame.normal)))
    return s
