import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from vpconvex.errors import GridTooCoarse, LadderExitsGrid, NonpositiveMargin
from vpconvex.field.analytic import BallLinearField, BallUniformField, ZeroField
from vpconvex.field.diagnostics import (
    boundary_decay_scan,
    decay_model,
    fit_envelope,
    hopf_margin,
    solver_noise_level,
)
from vpconvex.field.grid import Grid
from vpconvex.field.io import dump_grid_field, load_grid_field
from vpconvex.field.poisson import DensityGrid, eval_field, operator_for, pcg, solve_poisson
from vpconvex.geometry import Ball, Ellipsoid, frame_curvatures


def _uniform(grid, rho0=1.0):
    return DensityGrid.from_function(grid, lambda x: np.full(len(x), rho0))


@pytest.fixture(scope="module")
def ball32():
    g = Grid(Ball(1.0), h=1 / 32)
    return g, solve_poisson(_uniform(g), tol=1e-12)


def test_ball_uniform_error_is_second_order():
    errs = []
    exact = BallUniformField()
    for h in (1 / 16, 1 / 32):
        g = Grid(Ball(1.0), h=h)
        phi = solve_poisson(_uniform(g), tol=1e-12)
        X = g.node_coords[g.interior_idx]
        errs.append(np.max(np.abs(phi.phi[g.interior_idx] - exact.potential(X))))
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_potential_nonpositive_and_zero_outside(ball32):
    g, phi = ball32
    assert phi.phi.max() <= 0.0
    assert np.all(phi.phi[~g.interior] == 0.0)


def test_pcg_matches_direct_solve():
    g = Grid(Ball(1.0), cells=16)
    op = operator_for(g)
    rng = np.random.default_rng(0)
    b = rng.uniform(size=op.n)
    x, res, its = pcg(op.matrix, b, None, op.preconditioner("jacobi"), 1e-13)
    ref = spla.spsolve(op.matrix.tocsc(), b)
    np.testing.assert_allclose(x, ref, rtol=1e-9, atol=1e-12)
    assert res <= 1e-13


def test_operator_is_symmetric_positive():
    op = operator_for(Grid(Ellipsoid((1.0, 0.8, 0.6)), h=1 / 16))
    A = op.matrix
    assert abs(A - A.T).max() < 1e-9 * abs(A).max()
    assert np.all(A.diagonal() > 0)


def test_negative_density_rejected():
    g = Grid(Ball(1.0), cells=16)
    with pytest.raises(ValueError):
        solve_poisson(DensityGrid.from_function(g, lambda x: -np.ones(len(x))))


def test_too_coarse_grid():
    with pytest.raises(GridTooCoarse):
        Grid(Ball(1.0), cells=8)


def test_ellipsoid_uniform_converges():
    ax = np.array([1.0, 0.8, 0.6])
    c = 1.0 / (2.0 * np.sum(1.0 / ax**2))
    errs = []
    for h in (1 / 16, 1 / 32):
        g = Grid(Ellipsoid(ax), h=h)
        phi = solve_poisson(_uniform(g), tol=1e-12)
        X = g.node_coords[g.interior_idx]
        exact = c * (np.sum((X / ax) ** 2, axis=1) - 1.0)
        errs.append(np.max(np.abs(phi.phi[g.interior_idx] - exact)))
    assert errs[1] < errs[0] / 3


def test_gradient_interpolation_accuracy(ball32):
    g, phi = ball32
    rng = np.random.default_rng(3)
    d = rng.normal(size=(2000, 3))
    X = d / np.linalg.norm(d, axis=1)[:, None] * rng.uniform(0, 0.999, (2000, 1))
    err = np.abs(phi.gradient(X) - BallUniformField().gradient(X)).max()
    assert err < 5e-3


def test_field_energy_identity(ball32):
    g, phi = ball32
    # int |x/3|^2 over the unit ball
    exact = 4 * np.pi / 45
    assert phi.field_energy(_uniform(g)) == pytest.approx(exact, rel=2e-2)


def test_eval_field_local_components(ball32):
    _, phi = ball32
    x = np.array([0.9, 0.0, 0.0])
    fr = frame_curvatures([1.0, 0.0, 0.0], Ball(1.0))
    fr.x_perp = 0.1
    s = eval_field(phi, x, fr, v=np.array([0.0, 1.0, 0.0]))
    assert s.E_perp == pytest.approx(-0.3, abs=5e-3)
    # F = E_perp + sum w_i^2 b_i / m_i with m = 1 - k x_perp
    assert s.F == pytest.approx(s.E_perp - 1.0 / 0.9, abs=1e-12)


def test_hopf_margin_analytic_limit():
    f = BallUniformField()
    # -phi/x_perp = (1 + r)/6 at depth x_perp = 1 - r
    for band in (0.2, 0.1, 0.05):
        assert hopf_margin(f, Ball(1.0), band) == pytest.approx((2 - band) / 6, rel=1e-10)


def test_hopf_margin_rejects_zero_field():
    with pytest.raises(NonpositiveMargin):
        hopf_margin(ZeroField(), Ball(1.0), 0.1)
    with pytest.raises(ValueError):
        hopf_margin(BallUniformField(), Ball(1.0), 2.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1e-6, 0.5))
def test_envelope_recovers_exact_constant(C, dmin):
    d = np.geomspace(dmin, 0.5, 7)
    fit = fit_envelope(d, C * decay_model(d))
    assert fit.C == pytest.approx(C, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0, abs=1e-10)
    assert fit.holdout_ok


def test_envelope_flags_slower_decay():
    d = 0.2 * 0.5 ** np.arange(7)
    fit = fit_envelope(d, np.sqrt(d))
    assert not fit.holdout_ok


def test_decay_scan_analytic_tangential_profile():
    """Grid scan of rho = 1 + x_2 follows the closed-form tangential derivative."""
    exact = BallLinearField(axis=1)
    scan = boundary_decay_scan(exact.density, Ball(1.0), h=1 / 32, levels=5)
    ref = exact.gradient(scan.point[None] - scan.d[:, None] * scan.normal[None])
    t = np.maximum(np.abs(ref @ scan.tangents[0]), np.abs(ref @ scan.tangents[1]))
    np.testing.assert_allclose(scan.tangential, t, atol=1e-2)


def test_decay_scan_radial_control_is_noise():
    scan = boundary_decay_scan(lambda x: 1.0 + np.sum(x * x, axis=1), Ball(1.0), h=1 / 32, levels=4)
    assert np.all(scan.tangential <= solver_noise_level(scan))


def test_decay_scan_ladder_must_fit():
    with pytest.raises(LadderExitsGrid):
        boundary_decay_scan(lambda x: np.ones(len(x)), Ellipsoid((2.0, 1.0, 1.0)), h=1 / 16, d0=0.5)


def test_grid_dump_round_trip(tmp_path, ball32):
    g, phi = ball32
    binp, meta_p = dump_grid_field(tmp_path / "phi", phi.phi, g, time=0.5, name="phi")
    assert binp.stat().st_size == 8 * g.size
    arr, meta = load_grid_field(binp)
    assert meta["time"] == 0.5 and list(meta["dims"]) == list(g.shape)
    np.testing.assert_array_equal(arr.ravel(order="F"), g.to_xfastest(phi.phi))


def test_discrete_green_identity():
    g = Grid(Ellipsoid((1.0, 0.9, 0.7)), h=1 / 24)
    A = operator_for(g).matrix
    rng = np.random.default_rng(8)
    phi, psi = rng.normal(size=(2, A.shape[0]))
    lhs, rhs = phi @ (A @ psi), psi @ (A @ phi)
    assert abs(lhs - rhs) <= 1e-9 * abs(lhs)


def test_normal_force_negative_in_band(ball32):
    """F < 0 for the ball with uniform density, all sampled band points and |w| <= 1."""
    _, phi = ball32
    dom = Ball(1.0)
    rng = np.random.default_rng(9)
    worst = -np.inf
    for p in dom.boundary_samples(60):
        fr = frame_curvatures(p, dom)
        for xp in rng.uniform(0.02, 0.95 * dom.delta, 3):
            fr.x_perp = xp
            wv = rng.uniform(-1, 1, 2)
            wv /= max(1.0, np.linalg.norm(wv))
            v = wv[0] * fr.u1 + wv[1] * fr.u2
            s = eval_field(phi, p - xp * fr.normal, fr, v=v)
            worst = max(worst, s.F)
    assert worst < 0
