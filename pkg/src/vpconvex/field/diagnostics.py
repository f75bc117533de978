"""Near-wall diagnostics of a solved potential: Hopf margin and decay scans."""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import LadderExitsGrid, NonpositiveMargin
from ..geometry import ConvexDomain, principal_frames
from .grid import Grid
from .poisson import DensityGrid, solve_poisson

# 5-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _normal_mean(field, p, n, depth):
    """Mean of ``E . n`` along the inward segment from ``p`` to ``p - depth n``."""
    pts = p[:, None, :] - (depth[:, None, None] * _GL_X[None, :, None]) * n[:, None, :]
    E = field.gradient(pts.reshape(-1, 3)).reshape(len(p), len(_GL_X), 3)
    En = np.einsum("nqi,ni->nq", E, n)
    return En @ _GL_W


@dataclass
class HopfEstimate:
    band: float
    eps0: float
    point: np.ndarray
    x_perp: float


def hopf_margin(field, domain: ConvexDomain, band: float, n_boundary: int = 400, n_depth: int = 8,
                *, detail: bool = False):
    """Lower estimate of ``eps0`` in ``phi <= -eps0 x_perp`` over the wall band ``x_perp <= band``.

    ``-phi(x)/x_perp`` equals the mean of ``E . n`` along the normal segment to
    the wall because ``phi`` vanishes there, so the quotient is evaluated by
    quadrature of the gradient rather than by dividing a small interpolated
    potential by a small distance.  ``field`` needs a ``gradient`` method.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    if band > domain.delta:
        raise ValueError("band exceeds the tubular width")
    p = domain.boundary_samples(n_boundary)
    n = principal_frames(domain, p)["n"]
    depths = band * np.arange(1, n_depth + 1) / n_depth
    P = np.repeat(p, n_depth, axis=0)
    N = np.repeat(n, n_depth, axis=0)
    D = np.tile(depths, n_boundary)
    q = _normal_mean(field, P, N, D)
    i = int(np.argmin(q))
    eps0 = float(q[i])
    if not eps0 > 0.0:
        raise NonpositiveMargin(f"Hopf margin {eps0:.3e} is not positive in band {band:g}")
    if detail:
        return HopfEstimate(band, eps0, P[i] - D[i] * N[i], float(D[i]))
    return eps0


def hopf_scan(field, domain: ConvexDomain, bands, **kw) -> list[HopfEstimate]:
    return [hopf_margin(field, domain, b, detail=True, **kw) for b in bands]


# -- decay scans ------------------------------------------------------------------

def decay_model(d):
    d = np.asarray(d, dtype=float)
    return d * (1.0 + np.abs(np.log(d)))


@dataclass
class EnvelopeFit:
    """Fit of ``y ~ C d (1 + |log d|)``.

    ``C`` is the least-squares constant and ``r2`` its coefficient of
    determination; ``C_env`` is the smallest constant whose envelope covers all
    points.  ``holdout_ok`` says whether the envelope fitted on the larger half
    of the ladder already covers the smaller half.
    """

    C: float
    r2: float
    C_env: float
    holdout_ok: bool
    holdout_C: float

    def envelope(self, d):
        return self.C_env * decay_model(d)


def fit_envelope(d, y, slack: float = 1.0) -> EnvelopeFit:
    d = np.asarray(d, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    m = decay_model(d)
    C = float(m @ y / (m @ m))
    ss_res = float(np.sum((y - C * m) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # a spread at round-off level carries no information about the fit
    floor = 1e-24 * float(y @ y)
    if ss_tot > floor:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= floor else 0.0
    C_env = float(np.max(y / m))
    order = np.argsort(-d)
    half = order[: max(1, (len(d) + 1) // 2)]
    rest = order[len(half):]
    C_hold = float(np.max(y[half] / m[half]))
    ok = bool(np.all(y[rest] <= slack * C_hold * m[rest] * (1 + 1e-12) + 1e-300))
    return EnvelopeFit(C, r2, C_env, ok, C_hold)


@dataclass
class DecayScan:
    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    d: np.ndarray
    dphi_tau1: np.ndarray
    dphi_tau2: np.ndarray
    dphi_dt: np.ndarray
    tangential_fit: EnvelopeFit | None = None
    time_fit: EnvelopeFit | None = None
    extra: dict = field(default_factory=dict)

    @property
    def tangential(self) -> np.ndarray:
        return np.maximum(np.abs(self.dphi_tau1), np.abs(self.dphi_tau2))

    def rows(self):
        for i in range(len(self.d)):
            yield self.d[i], self.dphi_tau1[i], self.dphi_tau2[i], self.dphi_dt[i]


def _takes_time(func) -> bool:
    try:
        return len(inspect.signature(func).parameters) >= 2
    except (TypeError, ValueError):
        return False


def check_continuity(density, current, points, t: float, dt: float = 1e-4, dx: float = 1e-4) -> float:
    """Largest ``|d_t rho + div j|`` at ``points`` by central differences."""
    pts = np.atleast_2d(points)
    drho = (density(pts, t + dt) - density(pts, t - dt)) / (2 * dt)
    div = np.zeros(len(pts))
    for a in range(3):
        e = np.zeros(3)
        e[a] = dx
        div += (current(pts + e, t)[:, a] - current(pts - e, t)[:, a]) / (2 * dx)
    return float(np.max(np.abs(drho + div)))


def boundary_decay_scan(
    density,
    domain: ConvexDomain,
    *,
    h: float,
    point=None,
    d0: float = 0.2,
    levels: int = 7,
    t: float = 0.0,
    dt: float = 1e-2,
    current=None,
    continuity_tol: float = 1e-6,
    tol: float = 1e-12,
    preconditioner: str = "jacobi",
) -> DecayScan:
    """Tangential and time derivatives of ``phi`` on the ladder ``d = d0 2^-m`` along the inward normal.

    ``density`` is ``rho(x)`` or ``rho(x, t)``; in the second case the time
    derivative is a central difference of two solves at ``t +- dt``.  When a
    current ``j(x, t)`` is supplied the continuity equation is checked on the
    ladder points first.
    """
    if d0 > domain.delta:
        raise LadderExitsGrid(f"d0 = {d0:g} exceeds the tubular width {domain.delta:g}")
    if point is None:
        point = domain.ray_boundary(np.array([[1.0, 0.0, 0.0]]))[0]
    p = np.asarray(point, dtype=float).reshape(1, 3)
    fr = principal_frames(domain, p)
    n, u1, u2 = fr["n"][0], fr["u1"][0], fr["u2"][0]
    d = d0 * 0.5 ** np.arange(levels)
    X = p[0][None, :] - d[:, None] * n[None, :]
    grid = Grid(domain, h=h)
    timed = _takes_time(density)
    if timed and current is not None:
        viol = check_continuity(density, current, X, t)
        if viol > continuity_tol:
            raise ValueError(f"density and current violate continuity by {viol:.3e}")

    def solve_at(s):
        f = (lambda x: density(x, s)) if timed else density
        return solve_poisson(DensityGrid.from_function(grid, f, s), tol=tol, preconditioner=preconditioner)

    phi = solve_at(t)
    E = phi.gradient(X)
    dtau1 = E @ u1
    dtau2 = E @ u2
    if timed:
        # phi at a ladder point is -int_0^d E.n ds; use the same quadrature as the Hopf margin
        plus, minus = solve_at(t + dt), solve_at(t - dt)
        P = np.repeat(p, levels, axis=0)
        N = np.repeat(n[None], levels, axis=0)
        dphidt = -(d * (_normal_mean(plus, P, N, d) - _normal_mean(minus, P, N, d))) / (2 * dt)
    else:
        dphidt = np.zeros(levels)
    scan = DecayScan(p[0], n, np.stack([u1, u2]), d, dtau1, dtau2, dphidt)
    tan = scan.tangential
    if np.any(tan > 0):
        scan.tangential_fit = fit_envelope(d, tan)
    if timed and np.any(dphidt != 0):
        scan.time_fit = fit_envelope(d, dphidt)
    scan.extra = {"h": h, "iterations": phi.iterations, "residual": phi.residual, "max_E": float(np.abs(E).max())}
    return scan


def solver_noise_level(scan: DecayScan, tol: float = 1e-12) -> float:
    """Scale below which a derivative is indistinguishable from solver round-off."""
    return max(scan.extra.get("max_E", 1.0), 1e-300) * max(1e3 * tol, 1e-10) + math.ulp(1.0)
