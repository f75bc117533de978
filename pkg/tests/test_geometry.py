import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpconvex.errors import AmbiguousProjection, OutsideDomain
from vpconvex.geometry import (
    Ball,
    Ellipsoid,
    LevelSetDomain,
    LocalPhase,
    fibonacci_sphere,
    frame_curvatures,
    from_local,
    local_coordinates,
    make_domain,
    principal_frames,
    project_to_boundary,
    singular_set_distance,
    to_local,
)

BALL = Ball(1.0)
ELL = Ellipsoid((2.0, 1.0, 1.0))
# |y|^4-flavoured convex quartic: sum y_i^2 + 0.3 y0^4 + 0.2 y1^4 - 1
QUARTIC = LevelSetDomain([(1.0, (2, 0, 0)), (1.0, (0, 2, 0)), (1.0, (0, 0, 2)), (0.3, (4, 0, 0)),
                          (0.2, (0, 4, 0)), (-1.0, (0, 0, 0))])
DOMAINS = [BALL, Ball(2.0, center=(0.5, -0.2, 0.1)), ELL, Ellipsoid((1.5, 1.2, 0.8), center=(0.1, 0.0, 0.3)), QUARTIC]


def test_ball_projection_example():
    fr = project_to_boundary([0.5, 0.0, 0.0], BALL)
    np.testing.assert_allclose(fr.point, [1, 0, 0], atol=1e-14)
    assert fr.x_perp == pytest.approx(0.5)
    np.testing.assert_allclose(fr.normal, [1, 0, 0], atol=1e-14)


def test_center_is_ambiguous():
    with pytest.raises(AmbiguousProjection):
        project_to_boundary([0.0, 0.0, 0.0], BALL)


def test_outside_point_rejected():
    with pytest.raises(OutsideDomain):
        project_to_boundary([1.2, 0.0, 0.0], BALL)


def test_ellipsoid_projection_example():
    fr = project_to_boundary([1.9, 0.0, 0.0], ELL)
    np.testing.assert_allclose(fr.point, [2, 0, 0], atol=1e-12)
    assert fr.x_perp == pytest.approx(0.1, abs=1e-12)


def test_ellipsoid_projection_matches_dense_sampling():
    rng = np.random.default_rng(4)
    # dense boundary sample plus local polish as an independent oracle
    pts = ELL.boundary_samples(40000)
    for _ in range(5):
        x = ELL.boundary_samples(1)[0] * 0.0 + rng.uniform(-1, 1, 3) * [1.8, 0.8, 0.8]
        if ELL.phi(x[None])[0] >= 0:
            continue
        fr = project_to_boundary(x, ELL) if ELL.closest_points(x[None])[1][0] <= ELL.delta else None
        if fr is None:
            continue
        d_dense = np.min(np.linalg.norm(pts - x, axis=1))
        assert fr.x_perp <= d_dense + 1e-12
        assert fr.x_perp >= d_dense - 5e-3


def test_ellipsoid_band_width():
    assert ELL.delta == pytest.approx(0.25, rel=1e-6)
    with pytest.raises(AmbiguousProjection):
        project_to_boundary([1.0, 0.0, 0.0], ELL)


@pytest.mark.parametrize("R", [1.0, 2.0])
def test_sphere_curvatures(R):
    dom = Ball(R)
    for p in dom.boundary_samples(7):
        fr = frame_curvatures(p, dom)
        np.testing.assert_allclose(fr.k, [1 / R, 1 / R], rtol=1e-12)
        np.testing.assert_allclose(fr.b, [-1 / R, -1 / R], rtol=1e-12)


def test_ellipsoid_tip_curvature_matches_finite_differences():
    fr = frame_curvatures([2.0, 0.0, 0.0], ELL)
    np.testing.assert_allclose(fr.k, [2.0, 2.0], rtol=1e-6)
    # finite-difference shape operator from the normal field along the tangents
    eps = 1e-5
    for u, k in zip(fr.tangents, fr.k):
        a = ELL.ray_boundary((np.array([2.0, 0, 0]) + eps * u)[None])[0]
        b = ELL.ray_boundary((np.array([2.0, 0, 0]) - eps * u)[None])[0]
        na = ELL.grad(a[None])[0] / np.linalg.norm(ELL.grad(a[None])[0])
        nb = ELL.grad(b[None])[0] / np.linalg.norm(ELL.grad(b[None])[0])
        dn = (na - nb) / np.linalg.norm(a - b)
        np.testing.assert_allclose(dn, k * u, atol=1e-4)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: d.kind)
def test_frame_invariants_on_samples(dom):
    p = dom.boundary_samples(300)
    fr = principal_frames(dom, p)
    assert np.all(fr["k"] >= -1e-12)
    assert np.all(fr["b"] <= 1e-12)
    np.testing.assert_allclose(np.linalg.norm(fr["n"], axis=1), 1.0, atol=1e-13)
    assert np.max(np.abs(np.sum(fr["u1"] * fr["n"], axis=1))) < 1e-12
    assert np.max(np.abs(np.sum(fr["u2"] * fr["n"], axis=1))) < 1e-12
    assert np.max(np.abs(np.sum(fr["u1"] * fr["u2"], axis=1))) < 1e-12


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: d.kind)
def test_shape_operator_eigen_equation(dom):
    """Derivative of n along u_i equals k_i u_i, to O(h)."""
    p = dom.boundary_samples(20)
    fr = principal_frames(dom, p)
    h = 1e-5
    for j, key in enumerate(("u1", "u2")):
        u = fr[key]
        a, _ = dom.closest_points(p + h * u - 1e-3 * fr["n"])
        b, _ = dom.closest_points(p - h * u - 1e-3 * fr["n"])
        na = principal_frames(dom, a)["n"]
        nb = principal_frames(dom, b)["n"]
        dn = (na - nb) / np.linalg.norm(a - b, axis=1)[:, None]
        np.testing.assert_allclose(dn, fr["k"][:, j, None] * u, atol=1e-3)


def test_christoffel_symmetric():
    fr = frame_curvatures(ELL.boundary_samples(3)[1], ELL)
    G = fr.christoffel
    np.testing.assert_array_equal(G, np.swapaxes(G, 1, 2))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 0.999), st.integers(0, 10_000))
def test_ball_projection_radial(r, k):
    d = fibonacci_sphere(10_001)[k]
    x = r * d
    fr = project_to_boundary(x, BALL)
    np.testing.assert_allclose(fr.point, x / np.linalg.norm(x), atol=1e-12)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: d.kind)
def test_convexity_battery(dom):
    rng = np.random.default_rng(0)
    lo, hi = dom.bbox
    a = lo + rng.uniform(size=(5000, 3)) * (hi - lo)
    b = lo + rng.uniform(size=(5000, 3)) * (hi - lo)
    t = rng.uniform(size=(5000, 1))
    lhs = dom.phi(t * a + (1 - t) * b)
    assert np.all(lhs <= np.maximum(dom.phi(a), dom.phi(b)) + 1e-12)
    assert dom.phi(dom.center[None])[0] < 0
    far = dom.center + 1.01 * dom.L * fibonacci_sphere(200)
    assert np.all(dom.phi(far) > 0)
    g = dom.grad(dom.boundary_samples(200))
    assert np.all(np.linalg.norm(g, axis=1) > 0)


def test_local_examples():
    lp = to_local([0.5, 0, 0], [-1, 0, 0], BALL)
    assert lp.v_perp == pytest.approx(1.0)
    assert np.allclose(lp.w, 0.0)
    lp = to_local([0.5, 0, 0], [0, 1, 0], BALL)
    assert lp.v_perp == pytest.approx(0.0, abs=1e-15)
    assert np.linalg.norm(lp.w) == pytest.approx(1.0)


def test_round_trip_battery_ellipsoid():
    """10^4 random (x, v) in the band: from_local(to_local) is the identity, |v|^2 preserved."""
    rng = np.random.default_rng(11)
    n = 10_000
    p = ELL.boundary_samples(n)
    nrm = principal_frames(ELL, p)["n"]
    x = p - rng.uniform(0.001, 0.9, (n, 1)) * ELL.delta * nrm
    v = rng.normal(size=(n, 3))
    lc = local_coordinates(ELL, x, v)
    w2 = lc["w1"] ** 2 + lc["w2"] ** 2 + lc["v_perp"] ** 2
    np.testing.assert_allclose(w2, np.sum(v * v, axis=1), rtol=1e-10)
    x_back = lc["point"] - lc["x_perp"][:, None] * lc["n"]
    v_back = lc["w1"][:, None] * lc["u1"] + lc["w2"][:, None] * lc["u2"] - lc["v_perp"][:, None] * lc["n"]
    np.testing.assert_allclose(x_back, x, atol=1e-9 * ELL.L)
    np.testing.assert_allclose(v_back, v, atol=1e-9 * np.abs(v).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4999), st.floats(0.01, 0.95), st.tuples(*[st.floats(-2, 2)] * 3))
def test_round_trip_through_chart(k, frac, v):
    dom = QUARTIC
    p = dom.boundary_samples(5000)[k]
    n = principal_frames(dom, p[None])["n"][0]
    x = p - frac * dom.delta * n
    v = np.array(v)
    lp = to_local(x, v, dom)
    x2, v2 = from_local(lp, dom)
    np.testing.assert_allclose(x2, x, atol=1e-9 * dom.L)
    np.testing.assert_allclose(v2, v, atol=1e-9 * max(1.0, np.abs(v).max()))


def test_singular_set_distance_examples():
    assert singular_set_distance([1.0, 0, 0], [0, 1, 0], BALL) == pytest.approx(0.0, abs=1e-15)
    assert singular_set_distance([0.9, 0, 0], [0, 1, 0], BALL) == pytest.approx(0.1)
    assert singular_set_distance([1.0, 0, 0], [-0.2, 0, 0], BALL) == pytest.approx(0.04)


def test_make_domain_kinds():
    assert make_domain("ball", radius=2.0).L == pytest.approx(4.0)
    assert make_domain("ellipsoid", semi_axes=(2, 1, 1)).L == pytest.approx(4.0)
    with pytest.raises(ValueError):
        make_domain("torus")
    with pytest.raises(ValueError):
        Ball(-1.0)


def test_local_phase_array_order():
    lp = LocalPhase(0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    np.testing.assert_array_equal(lp.as_array(), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
