"""Characteristics with specular reflection, the local-frame system and Velocity-Lemma diagnostics.

The Cartesian pusher is velocity Verlet with ``E = grad phi`` as acceleration.
A provisional substep ``x + tau v + tau^2/2 a`` that leaves the domain is cut
at the wall by bisection on the implicit function, closed with its own
half-kick, reflected, and the rest of the step restarts from the wall.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AmbiguousProjection, BandExit, FrameInvalid, StuckAtBoundary
from .geometry import BoundaryFrame, ConvexDomain, LocalPhase, frame_curvatures, local_coordinates, principal_frames

MAX_REFLECTIONS_PER_STEP = 64
BISECTION_ITERS = 60
GRAZING_RTOL = 1e-10
WALL_RTOL = 1e-12


def specular_reflect(v, n) -> np.ndarray:
    """``v - 2 (v . n) n`` for one vector or a batch (rows)."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    if v.ndim == 1:
        return v - 2.0 * float(v @ n) * n
    return v - 2.0 * np.einsum("ij,ij->i", v, n)[:, None] * n


def _domain_of(field_, domain):
    if domain is not None:
        return domain
    d = getattr(field_, "domain", None)
    if d is None and hasattr(field_, "grid"):
        d = field_.grid.domain
    if d is None:
        raise ValueError("cannot infer the domain from the field; pass domain=")
    return d


@dataclass
class ReflectionEvent:
    time: float
    point: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    normal: np.ndarray
    grazing: float
    particle: int = 0

    @property
    def is_grazing(self) -> bool:
        return self.grazing < GRAZING_RTOL


@dataclass
class PushResult:
    X: np.ndarray
    V: np.ndarray
    tau_last: np.ndarray
    reflections: np.ndarray
    events: list = field(default_factory=list)
    gliding: np.ndarray | None = None


class Pusher:
    """Vectorised Verlet stepping of many characteristics in one field.

    ``open_step`` performs the drift and every wall event of a step but
    leaves the final half-kick open, so self-consistent drivers can close it
    with a field computed from the new positions.  ``step`` does both halves
    in the same field.
    """

    def __init__(self, domain: ConvexDomain, record_events: bool = False):
        self.domain = domain
        self.record_events = record_events
        self.wall_tol = WALL_RTOL * domain.L

    def _parabola(self, X, V, A, tau):
        return X + tau[:, None] * V + (0.5 * tau * tau)[:, None] * A

    def _crossing(self, X, V, A, tau):
        lo = np.zeros(len(X))
        hi = tau.copy()
        for _ in range(BISECTION_ITERS):
            mid = 0.5 * (lo + hi)
            inside = self.domain.phi(self._parabola(X, V, A, mid)) < 0.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return lo

    def _glide(self, X, V, tau):
        """Slide along the wall: project the chord end back onto it and keep V tangent at speed |V|."""
        target = X + tau[:, None] * V
        p, _ = self.domain.closest_points(target)
        n = principal_frames(self.domain, p)["n"]
        Vt = V - np.einsum("ij,ij->i", V, n)[:, None] * n
        s = np.linalg.norm(V, axis=1)
        st = np.linalg.norm(Vt, axis=1)
        Vt *= np.where(st > 0, s / np.where(st > 0, st, 1.0), 0.0)[:, None]
        return p, Vt

    def open_step(self, X, V, A, dt: float, accel, t0: float = 0.0) -> PushResult:
        X = np.array(X, dtype=float, copy=True)
        V = np.array(V, dtype=float, copy=True)
        A = np.array(A, dtype=float, copy=True)
        N = len(X)
        remaining = np.full(N, float(dt))
        tau_last = np.zeros(N)
        count = np.zeros(N, dtype=np.int64)
        gliding = np.zeros(N, dtype=bool)
        events = []
        active = np.arange(N)
        while active.size:
            x, v, a, tau = X[active], V[active], A[active], remaining[active]
            xp = self._parabola(x, v, a, tau)
            out = self.domain.phi(xp) >= 0.0
            stay = ~out
            if stay.any():
                i = active[stay]
                X[i] = xp[stay]
                V[i] = v[stay] + 0.5 * tau[stay, None] * a[stay]
                tau_last[i] = tau[stay]
                remaining[i] = 0.0
            if not out.any():
                break
            ii = active[out]
            x, v, a, tau = x[out], v[out], a[out], tau[out]
            g = self.domain.grad(x)
            n0 = g / np.linalg.norm(g, axis=1, keepdims=True)
            speed = np.linalg.norm(v, axis=1)
            on_wall = self.domain.phi(x) > -self.wall_tol
            tangent = np.abs(np.einsum("ij,ij->i", v, n0)) <= GRAZING_RTOL * np.maximum(speed, 1e-300)
            glide = on_wall & tangent
            if glide.any():
                gi = ii[glide]
                X[gi], V[gi] = self._glide(x[glide], v[glide], tau[glide])
                remaining[gi] = 0.0
                tau_last[gi] = 0.0
                gliding[gi] = True
            hit = ~glide
            ii = ii[hit]
            if ii.size == 0:
                break
            x, v, a, tau = x[hit], v[hit], a[hit], tau[hit]
            tc = self._crossing(x, v, a, tau)
            xw = self._parabola(x, v, a, tc)
            aw = accel(xw)
            vw = v + 0.5 * tc[:, None] * (a + aw)
            g = self.domain.grad(xw)
            n = g / np.linalg.norm(g, axis=1, keepdims=True)
            vout = specular_reflect(vw, n)
            if self.record_events:
                sp = np.linalg.norm(vw, axis=1)
                graz = np.abs(np.einsum("ij,ij->i", vw, n)) / np.where(sp > 0, sp, 1.0)
                t_hit = t0 + (dt - remaining[ii]) + tc
                for k, p in enumerate(ii):
                    events.append(ReflectionEvent(float(t_hit[k]), xw[k].copy(), vw[k].copy(), vout[k].copy(),
                                                  n[k].copy(), float(graz[k]), int(p)))
            X[ii] = xw
            V[ii] = vout
            A[ii] = aw
            remaining[ii] -= tc
            count[ii] += 1
            if np.any(count[ii] > MAX_REFLECTIONS_PER_STEP):
                bad = ii[count[ii] > MAX_REFLECTIONS_PER_STEP]
                raise StuckAtBoundary(
                    f"{bad.size} particle(s) reflected more than {MAX_REFLECTIONS_PER_STEP} times in one step "
                    f"(first index {int(bad[0])}); reduce dt"
                )
            active = ii
        return PushResult(X, V, tau_last, count, events, gliding)

    @staticmethod
    def close_step(res: PushResult, A_new: np.ndarray) -> np.ndarray:
        res.V = res.V + 0.5 * res.tau_last[:, None] * A_new
        return res.V

    def step(self, X, V, A, dt: float, accel, t0: float = 0.0):
        res = self.open_step(X, V, A, dt, accel, t0)
        A_new = accel(res.X)
        self.close_step(res, A_new)
        return res, A_new


# -- single characteristic -------------------------------------------------------

@dataclass
class PhaseState:
    X: np.ndarray
    V: np.ndarray
    s: float = 0.0
    reflections: int = 0
    local: LocalPhase | None = None
    alpha: float | None = None
    A: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(3)
        self.V = np.asarray(self.V, dtype=float).reshape(3)


def advance(state: PhaseState, field_, dt: float, domain: ConvexDomain | None = None,
            events: list | None = None) -> PhaseState:
    """One Verlet step of a single characteristic with wall events."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    domain = _domain_of(field_, domain)
    pusher = Pusher(domain, record_events=events is not None)
    A = state.A if state.A is not None else field_.gradient(state.X[None])[0]
    res, A_new = pusher.step(state.X[None], state.V[None], A[None], dt, field_.gradient, state.s)
    if events is not None:
        events.extend(res.events)
    return PhaseState(res.X[0], res.V[0], state.s + dt, state.reflections + int(res.reflections[0]), A=A_new[0])


@dataclass
class Trajectory:
    s: np.ndarray
    X: np.ndarray
    V: np.ndarray
    reflections: np.ndarray
    events: list
    dt: float
    domain: ConvexDomain

    def __len__(self):
        return len(self.s)

    def energy(self, field_) -> np.ndarray:
        return 0.5 * np.sum(self.V**2, axis=1) - field_.potential(self.X)

    def local(self) -> dict:
        return local_coordinates(self.domain, self.X, self.V)

    def alpha(self, field_) -> np.ndarray:
        lc = self.local()
        return alpha_batch(lc, field_.potential(self.X))

    def to_csv(self, path, field_) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        x_perp = np.full(len(self), np.nan)
        v_perp = np.full(len(self), np.nan)
        alpha = np.full(len(self), np.nan)
        ok = wall_distances(self.domain, self.X) <= self.domain.delta
        if ok.any():
            lc = local_coordinates(self.domain, self.X[ok], self.V[ok])
            x_perp[ok] = lc["x_perp"]
            v_perp[ok] = lc["v_perp"]
            alpha[ok] = alpha_batch(lc, field_.potential(self.X[ok]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "X1", "X2", "X3", "V1", "V2", "V3", "x_perp", "v_perp", "alpha", "reflections"])
            for i in range(len(self)):
                row = [self.s[i], *self.X[i], *self.V[i], x_perp[i], v_perp[i], alpha[i]]
                w.writerow([f"{x:.17g}" for x in row] + [int(self.reflections[i])])
        return path


def integrate_trajectory(x0, v0, field_, dt: float, T: float | None = None, *, domain=None,
                         max_reflections: int | None = None, record_events: bool = True) -> Trajectory:
    """Integrate one characteristic to time ``T`` or until ``max_reflections`` wall hits."""
    if T is None and max_reflections is None:
        raise ValueError("give T or max_reflections")
    domain = _domain_of(field_, domain)
    pusher = Pusher(domain, record_events=record_events)
    X = np.asarray(x0, dtype=float).reshape(1, 3)
    V = np.asarray(v0, dtype=float).reshape(1, 3)
    A = field_.gradient(X)
    nsteps = int(round(T / dt)) if T is not None else None
    s_list, X_list, V_list, R_list = [0.0], [X[0].copy()], [V[0].copy()], [0]
    events = []
    refl = 0
    k = 0
    while True:
        if nsteps is not None and k >= nsteps:
            break
        if max_reflections is not None and refl >= max_reflections:
            break
        res, A = pusher.step(X, V, A, dt, field_.gradient, k * dt)
        X, V = res.X, res.V
        refl += int(res.reflections[0])
        events.extend(res.events)
        k += 1
        s_list.append(k * dt)
        X_list.append(X[0].copy())
        V_list.append(V[0].copy())
        R_list.append(refl)
        if k > 10_000_000:
            raise RuntimeError("trajectory step budget exhausted")
    return Trajectory(np.array(s_list), np.array(X_list), np.array(V_list), np.array(R_list), events, dt, domain)


def integrate_ensemble(X, V, field_, dt: float, nsteps: int, *, domain=None, callback=None):
    """Push many characteristics in a static field; ``callback(k, X, V)`` after each step."""
    domain = _domain_of(field_, domain)
    pusher = Pusher(domain)
    X = np.array(X, dtype=float)
    V = np.array(V, dtype=float)
    A = field_.gradient(X)
    refl = np.zeros(len(X), dtype=np.int64)
    for k in range(nsteps):
        res, A = pusher.step(X, V, A, dt, field_.gradient, k * dt)
        X, V = res.X, res.V
        refl += res.reflections
        if callback is not None:
            callback(k + 1, X, V)
    return X, V, refl


# -- local frame ------------------------------------------------------------------

def _metric(k, x_perp):
    m = 1.0 - np.asarray(k) * x_perp
    if np.any(m <= 0.0):
        raise FrameInvalid(f"metric factor 1 - k x_perp = {np.min(m):.3e} is not positive")
    return m


def local_rhs(lp: LocalPhase, sample, frame: BoundaryFrame | None = None) -> np.ndarray:
    """Time derivatives of ``(mu1, mu2, x_perp, w1, w2, v_perp)``.

    ``sample`` provides the tangential components ``E1, E2`` and ``E_perp``
    of the field at the point; ``frame`` defaults to ``lp.frame``.
    """
    frame = frame or lp.frame
    k, b, G = frame.k, frame.b, frame.christoffel
    m = _metric(k, lp.x_perp)
    w = lp.w
    mu_dot = w / m
    sigma = np.array([sample.E1, sample.E2]) + lp.v_perp * w * k / m - np.einsum("ijl,j,l->i", G, mu_dot, w)
    F = sample.E_perp + float(np.sum(w * w * b / m))
    return np.array([mu_dot[0], mu_dot[1], lp.v_perp, sigma[0], sigma[1], F])


@dataclass
class _Sample:
    E1: float
    E2: float
    E_perp: float


def _local_derivs(domain, field_, p, x_perp, W, v_perp):
    """Derivatives of the ambient local state (x_par, x_perp, W, v_perp) via ``local_rhs``."""
    fr = frame_curvatures(p, domain, tol=1e-6)
    fr.x_perp = x_perp
    E = field_.gradient((p - x_perp * fr.normal)[None])[0]
    w1, w2 = float(W @ fr.u1), float(W @ fr.u2)
    lp = LocalPhase(0.0, 0.0, x_perp, w1, w2, v_perp, fr)
    r = local_rhs(lp, _Sample(float(E @ fr.u1), float(E @ fr.u2), float(-(E @ fr.normal))), fr)
    k = fr.k
    dp = r[0] * fr.u1 + r[1] * fr.u2
    # W is kept tangent: its normal rate follows from d(W . n)/dt = 0
    dW = r[3] * fr.u1 + r[4] * fr.u2 - (k[0] * w1 * r[0] + k[1] * w2 * r[1]) * fr.normal
    return dp, r[2], dW, r[5]


def integrate_local(x0, v0, field_, dt: float, nsteps: int, *, domain=None) -> dict:
    """RK4 integration of the boundary-adapted system, reporting ``(x_perp, v_perp)`` per step.

    The base point is carried as an ambient vector and pulled back onto the
    wall after every step; principal frames are recomputed at each stage.
    """
    domain = _domain_of(field_, domain)
    lc = local_coordinates(domain, np.atleast_2d(x0), np.atleast_2d(v0))
    p = lc["point"][0]
    xp = float(lc["x_perp"][0])
    W = lc["w1"][0] * lc["u1"][0] + lc["w2"][0] * lc["u2"][0]
    vp = float(lc["v_perp"][0])
    out_xp, out_vp = [xp], [vp]
    for _ in range(nsteps):
        def f(p_, xp_, W_, vp_):
            return _local_derivs(domain, field_, p_, xp_, W_, vp_)

        k1 = f(p, xp, W, vp)
        k2 = f(*_axpy((p, xp, W, vp), k1, 0.5 * dt, domain))
        k3 = f(*_axpy((p, xp, W, vp), k2, 0.5 * dt, domain))
        k4 = f(*_axpy((p, xp, W, vp), k3, dt, domain))
        inc = tuple((a + 2 * b + 2 * c + d) / 6.0 for a, b, c, d in zip(k1, k2, k3, k4))
        p, xp, W, vp = _axpy((p, xp, W, vp), inc, dt, domain)
        if xp < 0.0:
            raise BandExit("local integration reached the wall", {"x_perp": out_xp, "v_perp": out_vp})
        out_xp.append(xp)
        out_vp.append(vp)
    return {"x_perp": np.array(out_xp), "v_perp": np.array(out_vp)}


def _axpy(state, rate, h, domain):
    p, xp, W, vp = state
    dp, dxp, dW, dvp = rate
    p2 = p + h * dp
    # pull the base point back onto the wall and W into its tangent plane
    q, _ = domain.closest_points((p2 - 1e-3 * domain.delta * _normal(domain, p2))[None])
    q = q[0]
    n = _normal(domain, q)
    W2 = W + h * dW
    W2 = W2 - (W2 @ n) * n
    return q, xp + h * dxp, W2, vp + h * dvp


def _normal(domain, p):
    g = domain.grad(p[None])[0]
    return g / np.linalg.norm(g)


# -- Lyapunov functional ------------------------------------------------------------

def lyapunov_alpha(lp: LocalPhase, phi_value: float, frame: BoundaryFrame | None = None) -> float:
    """``v_perp^2/2 - phi - x_perp sum_i w_i^2 b_i / (1 - k_i x_perp)``."""
    frame = frame or lp.frame
    m = _metric(frame.k, lp.x_perp)
    w = lp.w
    return 0.5 * lp.v_perp**2 - float(phi_value) - float(np.sum(w * w * frame.b / m)) * lp.x_perp


def alpha_batch(lc: dict, phi_values) -> np.ndarray:
    """Vectorised ``alpha`` from the output of ``local_coordinates``."""
    k, b, xp = lc["k"], lc["b"], lc["x_perp"]
    m = 1.0 - k * xp[:, None]
    if np.any(m <= 0):
        raise FrameInvalid("metric factor is not positive")
    w2 = np.stack([lc["w1"], lc["w2"]], axis=1) ** 2
    return 0.5 * lc["v_perp"] ** 2 - np.asarray(phi_values) - np.sum(w2 * b / m, axis=1) * xp


@dataclass
class VelocityLemmaReport:
    alpha_min: float
    alpha_max: float
    alpha_ratio: float
    q_min: float
    q_max: float
    q_ratio: float
    samples: int
    reflections: int
    complete: bool = True


def wall_distances(domain: ConvexDomain, X: np.ndarray) -> np.ndarray:
    """Distance to the wall, ``inf`` where the closest point is not unique."""
    try:
        return domain.closest_points(X)[1]
    except AmbiguousProjection:
        out = np.full(len(X), np.inf)
        for i, x in enumerate(X):
            try:
                out[i] = domain.closest_points(x[None])[1][0]
            except AmbiguousProjection:
                pass
        return out


def _band_prefix(traj: Trajectory) -> int:
    d = wall_distances(traj.domain, traj.X)
    outside = np.flatnonzero(d > traj.domain.delta)
    return int(outside[0]) if outside.size else len(traj)


def _ratio(a: np.ndarray) -> float:
    lo = float(a.min())
    return float(a.max()) / lo if lo > 0 else math.inf


def velocity_lemma_ratio(traj: Trajectory, field_) -> VelocityLemmaReport:
    """Extremes of ``alpha`` and of ``x_perp + v_perp^2`` along a trajectory and their max/min ratios.

    Wall impacts recorded as events are included as samples (``x_perp = 0``,
    ``v_perp`` the impact normal speed).  Raises ``BandExit`` carrying the
    report up to the exit if the trajectory leaves the tubular band.
    """
    n = _band_prefix(traj)
    if n < 2:
        raise BandExit("trajectory starts outside the tubular band", None)
    lc = local_coordinates(traj.domain, traj.X[:n], traj.V[:n])
    alpha = alpha_batch(lc, field_.potential(traj.X[:n]))
    q = lc["x_perp"] + lc["v_perp"] ** 2
    t_end = traj.s[n - 1]
    ev = [e for e in traj.events if e.time <= t_end]
    if ev:
        vn = np.array([e.v_in @ e.normal for e in ev])
        q = np.concatenate([q, vn**2])
        alpha = np.concatenate([alpha, 0.5 * vn**2 - field_.potential(np.array([e.point for e in ev]))])
    rep = VelocityLemmaReport(float(alpha.min()), float(alpha.max()), _ratio(alpha), float(q.min()),
                              float(q.max()), _ratio(q), int(n), int(traj.reflections[n - 1]), n == len(traj))
    if n < len(traj):
        raise BandExit(f"trajectory left the tubular band at s = {traj.s[n]:.6g}", rep)
    return rep


def dalpha_dt_check(traj: Trajectory, field_) -> float:
    """``max |d alpha/dt| / (alpha (1 + |log alpha|))`` with central differences in time."""
    n = _band_prefix(traj)
    if n < 3:
        raise BandExit("too few samples inside the tubular band", None)
    lc = local_coordinates(traj.domain, traj.X[:n], traj.V[:n])
    alpha = alpha_batch(lc, field_.potential(traj.X[:n]))
    if np.any(alpha <= 0):
        raise ValueError("alpha must stay positive for the normalised quotient")
    s = traj.s[:n]
    da = (alpha[2:] - alpha[:-2]) / (s[2:] - s[:-2])
    a = alpha[1:-1]
    quot = np.abs(da) / (a * (1.0 + np.abs(np.log(a))))
    value = float(quot.max())
    if n < len(traj):
        raise BandExit(f"trajectory left the tubular band at s = {traj.s[n]:.6g}", value)
    return value


def grazing_launch(domain: ConvexDomain, x_perp0: float, speed: float = 1.0, direction=(1.0, 0.0, 0.0)):
    """Start point at depth ``x_perp0`` below the wall point hit along ``direction`` with tangential velocity."""
    p = domain.ray_boundary(np.asarray(direction, dtype=float)[None])[0]
    fr = frame_curvatures(p, domain, tol=1e-6)
    return p - x_perp0 * fr.normal, speed * fr.u1
