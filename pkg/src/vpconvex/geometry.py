"""Convex domains and the boundary-adapted coordinates used near the wall.

Conventions used throughout the package:

* ``n`` is the outward unit normal and ``x_perp >= 0`` is the distance to the
  wall measured inward, so ``x = x_par - x_perp * n``.
* ``v = w1*u1 + w2*u2 - v_perp*n``; ``v_perp > 0`` means moving away from
  the wall (``d x_perp / dt = v_perp``).
* Principal curvatures ``k_i >= 0`` for a convex domain, and the second
  fundamental form coefficients in the orthonormal principal frame are
  ``b_i = -k_i <= 0``.  Tangential metric factors are ``1 - k_i*x_perp``,
  which stay >= 1/2 inside the tubular band ``x_perp <= 0.5/max k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AmbiguousProjection, DegenerateFrame, OutsideDomain

UMBILIC_RTOL = 1e-8
PROJECTION_RTOL = 1e-12
PROJECTION_MAXITER = 50


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform unit vectors on S^2 (deterministic)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _axis_tangent_pair(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt of the global axis least aligned with each normal."""
    n = np.atleast_2d(n)
    a = np.argmin(np.abs(n), axis=1)
    e = np.zeros_like(n)
    e[np.arange(len(n)), a] = 1.0
    t1 = e - np.sum(e * n, axis=1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


class ConvexDomain:
    """Smooth convex bounded domain {Phi < 0} given by an implicit function.

    Subclasses provide ``phi``, ``grad`` and ``hess`` acting on arrays of
    shape (..., 3).  Diameter, bounding box and the tubular width are derived
    once at construction.
    """

    kind = "generic-level-set"

    def __init__(self, center: Sequence[float] = (0.0, 0.0, 0.0)):
        self.center = np.asarray(center, dtype=float).reshape(3)
        # C^5 boundary is a modelling assumption for every registered kind
        self.smooth_c5 = True
        self._finalize()

    # -- implicit function -------------------------------------------------
    def phi(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def contains(self, x) -> np.ndarray:
        return self.phi(x) < 0.0

    # -- derived geometric data -----------------------------------------------
    def _finalize(self):
        self.diameter = self._diameter()
        lo, hi = self._bbox()
        self.bbox = (lo, hi)
        self.kmax = self._kmax()
        self.delta = 0.5 / self.kmax

    def _diameter(self) -> float:
        pts = self.ray_boundary(fibonacci_sphere(1500))
        from scipy.spatial.distance import pdist

        return float(pdist(pts).max()) * 1.01

    def _bbox(self):
        pts = self.ray_boundary(fibonacci_sphere(4000))
        pad = 0.02 * self._diameter_hint()
        return pts.min(axis=0) - pad, pts.max(axis=0) + pad

    def _diameter_hint(self) -> float:
        return getattr(self, "diameter", 1.0)

    def _kmax(self) -> float:
        pts = self.ray_boundary(fibonacci_sphere(2000))
        k = principal_frames(self, pts)["k"]
        return float(k.max())

    @property
    def L(self) -> float:
        return self.diameter

    def ray_boundary(self, dirs: np.ndarray, origin=None) -> np.ndarray:
        """Boundary point hit by rays from ``origin`` (default: center)."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        o = self.center if origin is None else np.asarray(origin, dtype=float)
        o = np.broadcast_to(o, dirs.shape)
        hi = np.full(len(dirs), 1.0)
        for _ in range(200):
            out = self.phi(o + hi[:, None] * dirs) >= 0.0
            if out.all():
                break
            hi = np.where(out, hi, 2.0 * hi)
        lo = np.zeros(len(dirs))
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            inside = self.phi(o + mid[:, None] * dirs) < 0.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
            if np.all(hi - lo <= 1e-16 * np.maximum(hi, 1e-300)):
                break
        return o + lo[:, None] * dirs

    def boundary_samples(self, n: int) -> np.ndarray:
        return self.ray_boundary(fibonacci_sphere(n))

    def chart(self, p: np.ndarray) -> np.ndarray:
        """Global angular chart (polar, azimuth) of boundary points."""
        y = np.atleast_2d(p) - self.center
        r = np.linalg.norm(y, axis=1)
        return np.stack([np.arccos(np.clip(y[:, 2] / r, -1, 1)), np.arctan2(y[:, 1], y[:, 0])], axis=1)

    def chart_inverse(self, mu: np.ndarray) -> np.ndarray:
        mu = np.atleast_2d(mu)
        th, ph = mu[:, 0], mu[:, 1]
        d = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
        return self.ray_boundary(d)

    # -- closest point -----------------------------------------------------
    def closest_points(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest boundary points and distances for interior points (N, 3).

        Newton iteration on the Lagrange condition ``p - x = lam * grad Phi(p)``,
        ``Phi(p) = 0``, seeded by marching along ``grad Phi(x)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.grad(x)
        gn = np.linalg.norm(g, axis=1)
        if np.any(gn == 0.0):
            raise AmbiguousProjection("gradient vanishes at query point")
        p = self.ray_boundary(g / gn[:, None], origin=x)
        gp = self.grad(p)
        lam = np.linalg.norm(p - x, axis=1) / np.linalg.norm(gp, axis=1)
        tol = PROJECTION_RTOL * self.diameter
        eye = np.eye(3)
        for _ in range(PROJECTION_MAXITER):
            gp = self.grad(p)
            hp = self.hess(p)
            r1 = p - x - lam[:, None] * gp
            r2 = self.phi(p)
            J = np.zeros((len(x), 4, 4))
            J[:, :3, :3] = eye - lam[:, None, None] * hp
            J[:, :3, 3] = -gp
            J[:, 3, :3] = gp
            rhs = np.concatenate([r1, r2[:, None]], axis=1)
            step = np.linalg.solve(J, rhs[..., None])[..., 0]
            p = p - step[:, :3]
            lam = lam - step[:, 3]
            if np.max(np.abs(step[:, :3])) <= tol:
                break
        return p, np.linalg.norm(p - x, axis=1)


class Ellipsoid(ConvexDomain):
    kind = "ellipsoid"

    def __init__(self, semi_axes: Sequence[float], center=(0.0, 0.0, 0.0)):
        a = np.asarray(semi_axes, dtype=float).reshape(3)
        if np.any(a <= 0):
            raise ValueError("semi-axes must be positive")
        self.semi_axes = a
        self._scale = 0.5 * a.min()
        super().__init__(center)

    def phi(self, x):
        y = np.asarray(x) - self.center
        return self._scale * (np.sum((y / self.semi_axes) ** 2, axis=-1) - 1.0)

    def grad(self, x):
        y = np.asarray(x) - self.center
        return 2.0 * self._scale * y / self.semi_axes**2

    def hess(self, x):
        x = np.asarray(x)
        h = np.diag(2.0 * self._scale / self.semi_axes**2)
        return np.broadcast_to(h, x.shape[:-1] + (3, 3)).copy()

    def _diameter(self):
        return 2.0 * float(self.semi_axes.max())

    def _bbox(self):
        return self.center - self.semi_axes, self.center + self.semi_axes

    def _kmax(self):
        a = self.semi_axes
        return float(a.max() / a.min() ** 2)

    def ray_boundary(self, dirs, origin=None):
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        o = self.center if origin is None else np.asarray(origin, dtype=float)
        y = np.broadcast_to(o - self.center, dirs.shape)
        da = dirs / self.semi_axes
        ya = y / self.semi_axes
        A = np.sum(da * da, axis=1)
        B = np.sum(da * ya, axis=1)
        C = np.sum(ya * ya, axis=1) - 1.0
        t = (-B + np.sqrt(np.maximum(B * B - A * C, 0.0))) / A
        return np.broadcast_to(o, dirs.shape) + t[:, None] * dirs


class Ball(Ellipsoid):
    kind = "ball"

    def __init__(self, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        super().__init__((radius, radius, radius), center)

    def closest_points(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = x - self.center
        r = np.linalg.norm(y, axis=1)
        if np.any(r == 0.0):
            raise AmbiguousProjection("every boundary point is equidistant from the center")
        p = self.center + self.radius * y / r[:, None]
        return p, self.radius - r


class LevelSetDomain(ConvexDomain):
    """Polynomial level set ``Phi(y) = sum c * y0^p y1^q y2^r`` with y = x - center."""

    kind = "generic-level-set"

    def __init__(self, terms, center=(0.0, 0.0, 0.0)):
        self.terms = [(float(c), tuple(int(e) for e in exps)) for c, exps in terms]
        if not self.terms:
            raise ValueError("level-set needs at least one term")
        super().__init__(center)

    @staticmethod
    def _pow(y, e):
        return y**e if e > 0 else np.ones_like(y)

    def phi(self, x):
        y = np.asarray(x, dtype=float) - self.center
        out = np.zeros(y.shape[:-1])
        for c, (p, q, r) in self.terms:
            out = out + c * self._pow(y[..., 0], p) * self._pow(y[..., 1], q) * self._pow(y[..., 2], r)
        return out

    def grad(self, x):
        y = np.asarray(x, dtype=float) - self.center
        out = np.zeros(y.shape)
        for c, e in self.terms:
            for i in range(3):
                if e[i] == 0:
                    continue
                term = c * e[i] * np.ones(y.shape[:-1])
                for j in range(3):
                    ej = e[j] - 1 if j == i else e[j]
                    term = term * self._pow(y[..., j], ej)
                out[..., i] += term
        return out

    def hess(self, x):
        y = np.asarray(x, dtype=float) - self.center
        out = np.zeros(y.shape + (3,))
        for c, e in self.terms:
            for i in range(3):
                for k in range(3):
                    d = list(e)
                    coef = c
                    coef *= d[i]
                    d[i] -= 1
                    coef *= d[k] if d[k] > 0 else 0
                    d[k] -= 1
                    if coef == 0:
                        continue
                    term = coef * np.ones(y.shape[:-1])
                    for j in range(3):
                        term = term * self._pow(y[..., j], d[j])
                    out[..., i, k] += term
        return out


def make_domain(kind: str, **params) -> ConvexDomain:
    center = params.get("center", (0.0, 0.0, 0.0))
    if kind == "ball":
        return Ball(params.get("radius", 1.0), center)
    if kind == "ellipsoid":
        return Ellipsoid(params["semi_axes"], center)
    if kind in ("generic-level-set", "level-set"):
        return LevelSetDomain(params["terms"], center)
    raise ValueError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------------------
# frames


def principal_frames(domain: ConvexDomain, p: np.ndarray) -> dict:
    """Batched principal frame data at boundary points ``p`` (N, 3)."""
    p = np.atleast_2d(p)
    g = domain.grad(p)
    gn = np.linalg.norm(g, axis=1)
    if np.any(~np.isfinite(gn)) or np.any(gn <= 0.0):
        raise DegenerateFrame("vanishing gradient of the implicit function")
    n = g / gn[:, None]
    t1, t2 = _axis_tangent_pair(n)
    T = np.stack([t1, t2], axis=2)  # (N, 3, 2)
    H = domain.hess(p)
    S = np.einsum("nia,nij,njb->nab", T, H, T) / gn[:, None, None]
    if not np.all(np.isfinite(S)):
        raise DegenerateFrame("shape operator is not finite")
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    evals, evecs = np.linalg.eigh(S)
    # descending: k1 >= k2
    k = evals[:, ::-1]
    vecs = evecs[:, :, ::-1]
    u = np.einsum("nia,nab->nib", T, vecs)  # columns u1, u2
    # deterministic eigenvector sign: largest-magnitude component positive
    for j in range(2):
        col = u[:, :, j]
        idx = np.argmax(np.abs(col), axis=1)
        sgn = np.sign(col[np.arange(len(col)), idx])
        sgn[sgn == 0] = 1.0
        u[:, :, j] = col * sgn[:, None]
    kscale = np.maximum(np.abs(k).max(axis=1), 1e-300)
    umb = np.abs(k[:, 0] - k[:, 1]) < UMBILIC_RTOL * kscale
    u1 = np.where(umb[:, None], t1, u[:, :, 0])
    u2 = np.where(umb[:, None], t2, u[:, :, 1])
    return {"n": n, "u1": u1, "u2": u2, "k": k, "b": -k}


@dataclass
class BoundaryFrame:
    """Local boundary data at the closest boundary point of a query."""

    point: np.ndarray
    mu: np.ndarray
    x_perp: float
    normal: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    k: np.ndarray
    b: np.ndarray
    christoffel: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2)))

    @property
    def tangents(self) -> np.ndarray:
        return np.stack([self.u1, self.u2])

    def metric_factors(self) -> np.ndarray:
        return 1.0 - self.k * self.x_perp


@dataclass
class LocalPhase:
    mu1: float
    mu2: float
    x_perp: float
    w1: float
    w2: float
    v_perp: float
    frame: BoundaryFrame | None = None

    @property
    def w(self) -> np.ndarray:
        return np.array([self.w1, self.w2])

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2, self.x_perp, self.w1, self.w2, self.v_perp])


def _monge_christoffel(k: np.ndarray) -> np.ndarray:
    # Monge patch z = h(mu) over the tangent plane; Gamma^i_jl = h_i h_jl / (1 + |grad h|^2),
    # evaluated at the patch origin where grad h = 0 and hess h = diag(k).
    grad_h = np.zeros(2)
    hess_h = np.diag(k)
    return np.einsum("i,jl->ijl", grad_h, hess_h) / (1.0 + grad_h @ grad_h)


def frame_curvatures(x_par, domain: ConvexDomain, tol: float = 1e-8) -> BoundaryFrame:
    """Principal curvatures, principal directions, b_i and Christoffel symbols at a boundary point."""
    p = np.asarray(x_par, dtype=float).reshape(1, 3)
    g = domain.grad(p)[0]
    if abs(domain.phi(p)[0]) > tol * domain.diameter * max(np.linalg.norm(g), 1.0):
        raise ValueError("point is not on the boundary")
    fr = principal_frames(domain, p)
    k = fr["k"][0]
    return BoundaryFrame(
        point=p[0],
        mu=domain.chart(p)[0],
        x_perp=0.0,
        normal=fr["n"][0],
        u1=fr["u1"][0],
        u2=fr["u2"][0],
        k=k,
        b=fr["b"][0],
        christoffel=_monge_christoffel(k),
    )


def _check_inside(domain: ConvexDomain, x: np.ndarray):
    ph = domain.phi(x)
    tol = PROJECTION_RTOL * domain.diameter * 10
    if np.any(ph > tol):
        raise OutsideDomain("query point is outside the domain")


def project_points(domain: ConvexDomain, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched projection; raises if any point is outside or beyond the tubular band."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_inside(domain, x)
    p, d = domain.closest_points(x)
    if np.any(d > domain.delta * (1.0 + 1e-12)):
        raise AmbiguousProjection(
            f"point at distance {d.max():.6g} from the wall is outside the tubular band {domain.delta:.6g}"
        )
    return p, np.maximum(d, 0.0)


def project_to_boundary(x, domain: ConvexDomain) -> BoundaryFrame:
    x = np.asarray(x, dtype=float).reshape(1, 3)
    p, d = project_points(domain, x)
    fr = frame_curvatures(p[0], domain, tol=1e-6)
    fr.x_perp = float(d[0])
    return fr


def local_coordinates(domain: ConvexDomain, x: np.ndarray, v: np.ndarray) -> dict:
    """Batched (x, v) -> local phase arrays plus frame data."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    p, d = project_points(domain, x)
    fr = principal_frames(domain, p)
    n = fr["n"]
    return {
        "point": p,
        "mu": domain.chart(p),
        "x_perp": d,
        "w1": np.sum(v * fr["u1"], axis=1),
        "w2": np.sum(v * fr["u2"], axis=1),
        "v_perp": -np.sum(v * n, axis=1),
        **fr,
    }


def to_local(x, v, domain: ConvexDomain) -> LocalPhase:
    frame = project_to_boundary(x, domain)
    v = np.asarray(v, dtype=float).reshape(3)
    return LocalPhase(
        mu1=float(frame.mu[0]),
        mu2=float(frame.mu[1]),
        x_perp=frame.x_perp,
        w1=float(v @ frame.u1),
        w2=float(v @ frame.u2),
        v_perp=float(-(v @ frame.normal)),
        frame=frame,
    )


def from_local(lp: LocalPhase, domain: ConvexDomain) -> tuple[np.ndarray, np.ndarray]:
    p = domain.chart_inverse(np.array([lp.mu1, lp.mu2]))[0]
    fr = frame_curvatures(p, domain, tol=1e-6)
    x = p - lp.x_perp * fr.normal
    v = lp.w1 * fr.u1 + lp.w2 * fr.u2 - lp.v_perp * fr.normal
    return x, v


def singular_set_distance(x, v, domain: ConvexDomain) -> float:
    """``x_perp + v_perp**2``, comparable to the distance to grazing phase points."""
    lp = to_local(x, v, domain)
    return lp.x_perp + lp.v_perp**2
