import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpconvex import kernels
from vpconvex.field.grid import Grid
from vpconvex.geometry import Ball

needs_cython = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")

GRID = Grid(Ball(1.0), cells=16)


def _particles(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = rng.uniform(size=(n, 1)) ** (1 / 3) * 0.999
    return d * r, rng.uniform(0.1, 2.0, n)


def _dep(X, w, backend, workers=1):
    g = GRID
    return kernels.deposit(X, w, g.origin, g.h, g.shape, g.fold_target, workers=workers, backend=backend)


def test_python_deposit_conserves_weight():
    X, w = _particles(5000, 1)
    sums, bad = _dep(X, w, "python")
    assert bad == 0
    assert sums.sum() == pytest.approx(w.sum(), rel=1e-13)
    assert np.all(sums[~GRID.interior] == 0.0)


def test_single_particle_on_node_hits_one_node():
    g = GRID
    idx = g.interior_idx[len(g.interior_idx) // 2]
    x = g.node_coords[idx][None]
    sums, _ = _dep(x, np.array([3.0]), "python")
    assert sums[idx] == pytest.approx(3.0)
    assert np.count_nonzero(sums) == 1


def test_gather_reproduces_linear_functions():
    g = GRID
    lin = g.node_coords @ np.array([1.0, -2.0, 0.5]) + 0.25
    X, _ = _particles(300, 2)
    out, bad = kernels.gather(X * 0.7, g.origin, g.h, g.shape, lin[None], backend="python")
    assert bad == 0
    np.testing.assert_allclose(out[:, 0], 0.7 * X @ np.array([1.0, -2.0, 0.5]) + 0.25, atol=1e-13)


def test_out_of_grid_particle_is_rejected():
    g = GRID
    X = np.array([[10.0, 0.0, 0.0]])
    _, bad = _dep(X, np.ones(1), "python")
    assert bad == 1
    out, bad = kernels.gather(X, g.origin, g.h, g.shape, np.zeros((1, g.size)), backend="python")
    assert bad == 1 and np.isnan(out).all()


def test_worker_partition_matches_serial():
    X, w = _particles(4000, 3)
    a, _ = _dep(X, w, "python", workers=1)
    b, _ = _dep(X, w, "python", workers=3)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@needs_cython
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3000), st.integers(0, 2**31 - 1))
def test_backends_agree_on_deposit(n, seed):
    X, w = _particles(n, seed)
    a, ba = _dep(X, w, "python")
    b, bb = _dep(X, w, "cython")
    assert ba == bb == 0
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_cython
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2000), st.integers(0, 2**31 - 1))
def test_backends_agree_on_gather(n, seed):
    g = GRID
    X, _ = _particles(n, seed)
    rng = np.random.default_rng(seed)
    nodal = rng.normal(size=(4, g.size))
    a, _ = kernels.gather(X, g.origin, g.h, g.shape, nodal, backend="python")
    b, _ = kernels.gather(X, g.origin, g.h, g.shape, nodal, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@needs_cython
def test_backends_agree_on_rejects():
    g = GRID
    X = np.array([[10.0, 0.0, 0.0], [0.1, 0.2, 0.3], [-10.0, 0.0, 0.0]])
    _, ba = _dep(X, np.ones(3), "python")
    _, bb = _dep(X, np.ones(3), "cython")
    assert ba == bb == 2
