"""Initial distributions ``f0(x, v) = A g(x) h(v)``, their validation and particle sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from ..errors import EmptySupport
from ..geometry import ConvexDomain, Ellipsoid, fibonacci_sphere, principal_frames

PROFILES = ("maxwellian-bump", "ring", "uniform-box", "uniform-ball", "drifting-maxwellian", "zero")


def bump(s):
    s = np.asarray(s, dtype=float)
    return np.where(s < 1.0, np.clip(1.0 - s * s, 0.0, None) ** 3, 0.0)


@dataclass
class InitialData:
    """Analytic initial distribution in product form.

    Spatial factor ``g``: a bump (or indicator for the uniform profiles) on
    the ball ``|x - x_center| < x_radius``, an indicator of ``[x_lo, x_hi]``
    for ``uniform-box``, or the indicator of the whole domain for
    ``drifting-maxwellian``.  Velocity factor ``h``: a Maxwellian of
    temperature ``temperature`` about ``v_center`` truncated to the ball of
    radius ``v_radius`` (a ring ``exp(-(|v| - ring_speed)^2 / (2 ring_width^2))``
    for ``ring``, an indicator for the uniform profiles).
    """

    profile: str = "maxwellian-bump"
    amplitude: float = 1.0
    x_center: tuple = (0.0, 0.0, 0.0)
    x_radius: float = 0.5
    v_center: tuple = (0.0, 0.0, 0.0)
    v_radius: float = 1.0
    temperature: float = 0.1
    ring_speed: float = 0.5
    ring_width: float = 0.1
    x_lo: tuple = (-0.25, -0.25, -0.25)
    x_hi: tuple = (0.25, 0.25, 0.25)
    v_lo: tuple = (-0.5, -0.5, -0.5)
    v_hi: tuple = (0.5, 0.5, 0.5)
    delta0: float | None = None
    c0: float = 0.0
    holder_mu: float = 0.5
    domain: ConvexDomain | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {PROFILES}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        for name in ("x_radius", "v_radius", "temperature", "ring_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.profile == "drifting-maxwellian" and self.domain is None:
            raise ValueError("drifting-maxwellian needs the domain")

    # -- factors -------------------------------------------------------------
    @property
    def _xc(self):
        return np.asarray(self.x_center, dtype=float)

    @property
    def _vc(self):
        return np.asarray(self.v_center, dtype=float)

    def g(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.profile
        if p == "zero":
            return np.zeros(len(x))
        if p == "uniform-box":
            lo, hi = np.asarray(self.x_lo), np.asarray(self.x_hi)
            return np.all((x >= lo) & (x <= hi), axis=1).astype(float)
        if p == "drifting-maxwellian":
            return (self.domain.phi(x) <= 1e-12 * self.domain.L).astype(float)
        s = np.linalg.norm(x - self._xc, axis=1) / self.x_radius
        if p == "uniform-ball":
            return (s <= 1.0).astype(float)
        return bump(s)

    def _h_radial(self, r):
        r = np.asarray(r, dtype=float)
        p = self.profile
        inside = r <= self.v_radius
        if p in ("maxwellian-bump", "drifting-maxwellian"):
            val = np.exp(-r * r / (2.0 * self.temperature))
        elif p == "ring":
            val = np.exp(-((r - self.ring_speed) ** 2) / (2.0 * self.ring_width**2))
        else:
            val = np.ones_like(r)
        return np.where(inside, val, 0.0)

    def h(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.profile == "zero":
            return np.zeros(len(v))
        if self.profile == "uniform-box":
            lo, hi = np.asarray(self.v_lo), np.asarray(self.v_hi)
            return np.all((v >= lo) & (v <= hi), axis=1).astype(float)
        return self._h_radial(np.linalg.norm(v - self._vc, axis=1))

    def f0(self, x, v) -> np.ndarray:
        return self.amplitude * self.g(x) * self.h(v)

    def f_max(self) -> float:
        """Supremum of ``f0`` (each factor peaks at 1)."""
        return 0.0 if self.profile == "zero" else float(self.amplitude)

    def speed_bound(self) -> float:
        """``Q(0)``: largest speed in the velocity support."""
        if self.profile == "uniform-box":
            c = np.maximum(np.abs(self.v_lo), np.abs(self.v_hi))
            return float(np.linalg.norm(c))
        return float(np.linalg.norm(self._vc) + self.v_radius)

    # -- integrals -------------------------------------------------------------
    def _radial_integral(self, func, R) -> float:
        val, _ = integrate.quad(lambda r: func(r) * r * r, 0.0, R, limit=200, epsabs=0, epsrel=1e-13)
        return 4.0 * math.pi * val

    def x_integral(self) -> float:
        p = self.profile
        if p == "zero":
            return 0.0
        if p == "uniform-box":
            return float(np.prod(np.asarray(self.x_hi) - np.asarray(self.x_lo)))
        if p == "drifting-maxwellian":
            return domain_volume(self.domain)
        if p == "uniform-ball":
            return 4.0 / 3.0 * math.pi * self.x_radius**3
        return self._radial_integral(lambda r: float(bump(r / self.x_radius)), self.x_radius)

    def v_integral(self) -> float:
        p = self.profile
        if p == "zero":
            return 0.0
        if p == "uniform-box":
            return float(np.prod(np.asarray(self.v_hi) - np.asarray(self.v_lo)))
        if p == "ring":
            # the ring peak can sit inside the ball; split the integral there
            s = min(self.ring_speed, self.v_radius)
            f = lambda r: float(self._h_radial(r))
            return self._radial_integral(f, s) + (
                4 * math.pi * integrate.quad(lambda r: f(r) * r * r, s, self.v_radius, limit=200)[0]
            )
        return self._radial_integral(lambda r: float(self._h_radial(r)), self.v_radius)

    def total_mass(self) -> float:
        """``int f0 dx dv`` by one-dimensional radial quadrature of each factor."""
        return self.amplitude * self.x_integral() * self.v_integral()

    def flatness_delta(self, domain: ConvexDomain) -> float:
        return 0.02 * domain.L if self.delta0 is None else float(self.delta0)


def domain_volume(domain: ConvexDomain, n: int = 1 << 16, seed: int = 0) -> float:
    if isinstance(domain, Ellipsoid):
        return 4.0 / 3.0 * math.pi * float(np.prod(domain.semi_axes))
    lo, hi = domain.bbox
    u = qmc.Sobol(3, scramble=True, seed=seed).random(n)
    x = lo + u * (hi - lo)
    return float(np.prod(hi - lo)) * float(np.mean(domain.phi(x) < 0.0))


# -- validation ----------------------------------------------------------------

@dataclass
class ValidationReport:
    passed: bool
    reflection_violation: float
    reflection_point: tuple | None
    gradient_violation: float
    flatness_violation: float
    nonnegative: bool
    support_inside: bool
    delta0: float
    c0: float
    details: dict = field(default_factory=dict)


def _normal_derivative(func, x, n, eps):
    """Inward normal derivative ``-(grad func . n)`` by central differences."""
    return -(func(x + eps * n) - func(x - eps * n)) / (2.0 * eps)


def validate_initial(data: InitialData, domain: ConvexDomain, *, field=None, n_boundary: int = 200,
                     n_velocity: int = 64, n_flat: int = 4000, seed: int = 0, tol: float = 1e-12,
                     h: float | None = None) -> ValidationReport:
    """Check specular compatibility, the first-order compatibility condition and flatness by sampling.

    ``field`` is the initial potential; when omitted and the gradient
    condition is needed, one Poisson solve on a grid of spacing ``h``
    (default L/32) is performed from the spatial density of ``f0``.
    """
    rng = np.random.default_rng(seed)
    p = domain.boundary_samples(n_boundary)
    n = principal_frames(domain, p)["n"]
    Q = data.speed_bound()
    V = rng.uniform(-1.0, 1.0, size=(n_velocity, 3)) * Q * 1.1
    P = np.repeat(p, n_velocity, axis=0)
    Nn = np.repeat(n, n_velocity, axis=0)
    W = np.tile(V, (n_boundary, 1))
    Ws = W - 2.0 * np.einsum("ij,ij->i", W, Nn)[:, None] * Nn
    f_in = data.f0(P, W)
    f_out = data.f0(P, Ws)
    diff = np.abs(f_in - f_out)
    i = int(np.argmax(diff))
    refl = float(diff[i])
    where = (tuple(P[i]), tuple(W[i])) if refl > 0 else None

    # gradient condition: v_perp [d_x f(x, v*) + d_x f(x, v)] + 2 E_perp d_v f(x, v) = 0
    eps = 1e-6 * domain.L
    dxf_s = _normal_derivative(lambda y: data.f0(y, Ws), P, Nn, eps)
    dxf = _normal_derivative(lambda y: data.f0(y, W), P, Nn, eps)
    dvf = _normal_derivative(lambda u: data.f0(P, u), W, Nn, eps * max(Q, 1.0))
    grad_terms = np.abs(dxf_s) + np.abs(dxf) + np.abs(dvf)
    if np.any(grad_terms > 0):
        if field is None:
            from ..field.grid import Grid
            from ..field.poisson import DensityGrid, solve_poisson

            grid = Grid(domain, h=h or domain.L / 32)
            rho = DensityGrid(grid, data.amplitude * data.v_integral() * grid.nodal_field(data.g))
            field = solve_poisson(rho)
        E = field.gradient(P - 1e-9 * domain.L * Nn)
        E_perp = -np.einsum("ij,ij->i", E, Nn)
        v_perp = -np.einsum("ij,ij->i", W, Nn)
        gviol = float(np.max(np.abs(v_perp * (dxf_s + dxf) + 2.0 * E_perp * dvf)))
    else:
        gviol = 0.0

    # flatness: f0 = c0 where x_perp + v_perp^2 <= delta0
    d0 = data.flatness_delta(domain)
    xp = rng.uniform(0.0, d0, n_flat)
    k = rng.integers(0, n_boundary, n_flat)
    Xf = p[k] - xp[:, None] * n[k]
    vp = rng.uniform(-1.0, 1.0, n_flat) * np.sqrt(np.maximum(d0 - xp, 0.0))
    t = rng.normal(size=(n_flat, 3))
    t -= np.einsum("ij,ij->i", t, n[k])[:, None] * n[k]
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    Vf = t * rng.uniform(0.0, Q * 1.1, (n_flat, 1)) - vp[:, None] * n[k]
    flat = float(np.max(np.abs(data.f0(Xf, Vf) - data.c0)))

    # positivity and support inside the closure
    u = rng.uniform(size=(4000, 6))
    lo, hi = domain.bbox
    xs = lo + u[:, :3] * (hi - lo)
    vs = (u[:, 3:] * 2 - 1) * Q * 1.2
    fv = data.f0(xs, vs)
    nonneg = bool(np.all(fv >= 0))
    outside = domain.phi(xs) > 0
    support_inside = bool(np.all(fv[outside] == 0))

    passed = refl <= tol and gviol <= max(tol, 1e-8) and flat <= tol and nonneg and support_inside
    return ValidationReport(passed, refl, where, gviol, flat, nonneg, support_inside, d0, data.c0,
                            {"samples": int(len(P)), "flat_samples": n_flat})


# -- sampling ------------------------------------------------------------------

def _ball_map(u, center, radius):
    r = radius * np.cbrt(u[:, 0])
    ct = 2.0 * u[:, 1] - 1.0
    st = np.sqrt(np.clip(1.0 - ct * ct, 0.0, None))
    ph = 2.0 * math.pi * u[:, 2]
    return np.asarray(center) + r[:, None] * np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)


@dataclass
class ParticleEnsemble:
    """Weighted characteristics; weights never change after sampling."""

    X: np.ndarray
    V: np.ndarray
    w: np.ndarray
    tag: np.ndarray
    Q0: float
    seed: int | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.V = np.ascontiguousarray(self.V, dtype=float)
        self.w = np.ascontiguousarray(self.w, dtype=float)
        self.w.setflags(write=False)
        self._w0 = self.w.copy()
        self._tag0 = np.array(self.tag, copy=True)

    @property
    def N(self) -> int:
        return len(self.w)

    def total_weight(self) -> float:
        return math.fsum(self.w)

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.X.copy(), self.V.copy(), self._w0.copy(), self._tag0.copy(), self.Q0, self.seed)

    def weights_unchanged(self) -> bool:
        return bool(np.array_equal(self.w, self._w0) and np.array_equal(self.tag, self._tag0))

    def speed_max(self) -> float:
        live = self.w > 0
        if not live.any():
            return 0.0
        return float(np.sqrt(np.max(np.einsum("ij,ij->i", self.V[live], self.V[live]))))


def _sample_support(data: InitialData, domain: ConvexDomain | None, n: int, seed: int):
    p = data.profile
    if p == "drifting-maxwellian":
        # rejection from the bounding box, oversampled and truncated to n
        lo, hi = data.domain.bbox
        sob = qmc.Sobol(6, scramble=True, seed=seed)
        u = sob.random(1 << int(math.ceil(math.log2(max(4 * n, 2)))))
        x = lo + u[:, :3] * (hi - lo)
        keep = data.domain.phi(x) < 0.0
        u, x = u[keep][:n], x[keep][:n]
        if len(x) < n:
            raise EmptySupport("rejection sampling produced too few interior points")
        vol_x = domain_volume(data.domain)
    else:
        m = 1 << int(math.ceil(math.log2(max(n, 2))))
        u = qmc.Sobol(6, scramble=True, seed=seed).random(m)[:n]
        if p == "uniform-box":
            lo, hi = np.asarray(data.x_lo), np.asarray(data.x_hi)
            x = lo + u[:, :3] * (hi - lo)
            vol_x = float(np.prod(hi - lo))
        else:
            x = _ball_map(u[:, :3], data.x_center, data.x_radius)
            vol_x = 4.0 / 3.0 * math.pi * data.x_radius**3
    if p == "uniform-box":
        lo, hi = np.asarray(data.v_lo), np.asarray(data.v_hi)
        v = lo + u[:, 3:] * (hi - lo)
        vol_v = float(np.prod(hi - lo))
    else:
        v = _ball_map(u[:, 3:], data.v_center, data.v_radius)
        vol_v = 4.0 / 3.0 * math.pi * data.v_radius**3
    return x, v, vol_x * vol_v


def sample_ensemble(data: InitialData, N: int, seed: int = 0, domain: ConvexDomain | None = None) -> ParticleEnsemble:
    """Scrambled-Sobol sampling of the phase-space support with weights ``f0 * volume / N``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if data.profile == "zero" or data.amplitude == 0.0:
        raise EmptySupport("f0 vanishes identically")
    x, v, vol = _sample_support(data, domain, N, seed)
    tag = data.f0(x, v)
    w = tag * vol / N
    if not np.any(w > 0):
        raise EmptySupport("no sampled point carries weight")
    if domain is not None and np.any(domain.phi(x) > 0):
        raise ValueError("spatial support of f0 leaves the domain")
    return ParticleEnsemble(x, v, w, tag, float(np.sqrt(np.max(np.sum(v[w > 0] ** 2, axis=1)))), seed)
