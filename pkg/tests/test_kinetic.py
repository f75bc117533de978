import csv
import math

import numpy as np
import pytest

from vpconvex.errors import BlowupSuspected, EmptySupport, ParticleOutside
from vpconvex.field.grid import Grid
from vpconvex.geometry import Ball
from vpconvex.kinetic import (
    InitialData,
    QTracker,
    Scenario,
    deposit,
    picard_run,
    q_tracker,
    sample_ensemble,
    self_consistent_run,
    validate_initial,
    write_diagnostics_csv,
)

BALL = Ball(1.0)
BUMP = InitialData(profile="maxwellian-bump", amplitude=2.0, x_radius=0.6, v_radius=1.0, temperature=0.1)


@pytest.fixture(scope="module")
def grid16():
    return Grid(BALL, cells=16)


def test_sampled_mass_matches_quadrature():
    ens = sample_ensemble(BUMP, 10_000, seed=1, domain=BALL)
    assert ens.total_weight() == pytest.approx(BUMP.total_mass(), rel=5e-3)
    assert ens.speed_max() <= BUMP.v_radius


def test_uniform_box_mass_is_exact():
    d = InitialData(profile="uniform-box", amplitude=0.5)
    ens = sample_ensemble(d, 1000, domain=BALL)
    assert ens.total_weight() == pytest.approx(0.5 * 0.5**3 * 1.0**3, rel=1e-12)


def test_sampling_is_seeded():
    a = sample_ensemble(BUMP, 512, seed=3)
    b = sample_ensemble(BUMP, 512, seed=3)
    c = sample_ensemble(BUMP, 512, seed=4)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_zero_profile_has_empty_support():
    with pytest.raises(EmptySupport):
        sample_ensemble(InitialData(profile="zero"), 100)


def test_weights_are_read_only():
    ens = sample_ensemble(BUMP, 256)
    with pytest.raises(ValueError):
        ens.w[0] = 1.0
    ens.X += 0.0
    assert ens.weights_unchanged()


def test_validation_accepts_bump_and_rejects_drift():
    assert validate_initial(BUMP, BALL).passed
    drift = InitialData(profile="drifting-maxwellian", v_center=(0.3, 0.0, 0.0), domain=BALL)
    rep = validate_initial(drift, BALL)
    assert not rep.passed
    assert rep.reflection_violation > 0.1


def test_deposit_conserves_mass(grid16):
    ens = sample_ensemble(BUMP, 5000, domain=BALL)
    rho = deposit(ens, grid16)
    assert rho.total_mass() == pytest.approx(ens.total_weight(), rel=1e-12)
    assert np.all(rho.values >= 0)


def test_deposit_near_wall_folds_inside(grid16):
    X = np.array([[0.999, 0.0, 0.0], [0.0, -0.9995, 0.0]])
    rho = deposit(X, grid16, np.array([1.0, 2.0]))
    assert rho.total_mass() == pytest.approx(3.0, rel=1e-13)


def test_deposit_rejects_outside_particle(grid16):
    with pytest.raises(ParticleOutside):
        deposit(np.array([[1.1, 0.0, 0.0]]), grid16, np.ones(1))


def test_q_tracker_is_running_max():
    hist = [np.array([[1.0, 0, 0]]), np.array([[0.5, 0, 0]]), np.array([[0, 2.0, 0]])]
    np.testing.assert_array_equal(q_tracker(hist), [1.0, 1.0, 2.0])
    tr = QTracker()
    tr.update(np.array([[5.0, 0, 0], [1.0, 0, 0]]), np.array([0.0, 1.0]))
    assert tr.value == 1.0


@pytest.fixture(scope="module")
def short_run(grid16):
    sc = Scenario(BUMP, grid16, N=4000, seed=0)
    return sc, self_consistent_run(sc, 0.1, 2e-3)


def test_self_consistent_conservation(short_run):
    _, res = short_run
    m = res.series("mass")
    E = res.series("total_energy")
    assert np.max(np.abs(np.diff(m))) <= 1e-10 * m[0]
    assert np.max(np.abs(E - E[0])) / E[0] < 1e-2
    assert res.ensemble.weights_unchanged()
    assert all(r.rho_bound_ok for r in res.records)
    assert np.all(np.diff(res.series("Q")) >= 0)
    assert np.all(res.series("hopf_margin") > 0)


def test_diagnostics_csv(tmp_path, short_run):
    _, res = short_run
    p = write_diagnostics_csv(tmp_path / "d.csv", res.records)
    rows = list(csv.reader(p.open()))
    assert rows[0][:3] == ["t", "mass", "kinetic_energy"]
    assert len(rows) == len(res.records) + 1
    assert float(rows[1][1]) == res.records[0].mass


def test_blowup_sentinel_fires(grid16):
    sc = Scenario(BUMP, grid16, N=500, ceiling=1e-3)
    with pytest.raises(BlowupSuspected):
        self_consistent_run(sc, 0.01, 1e-3)


def test_empty_run_is_quiet(grid16):
    sc = Scenario(InitialData(profile="zero"), grid16, N=10)
    res = self_consistent_run(sc, 0.005, 1e-3)
    assert all(r.mass == 0 and r.total_energy == 0 for r in res.records)


def test_picard_contracts_to_self_consistent(grid16, short_run):
    sc, ref = short_run
    pr = picard_run(sc, 0.1, 2e-3, n_max=6, tol=1e-8)
    d = pr.deltas
    assert len(d) >= 3
    assert all(b < a for a, b in zip(d, d[1:]) if a > 0)
    assert all(it.q_bound_ok(pr.Q0, pr.times) for it in pr.iterates[1:])
    fin = pr.final.records[-1]
    assert fin.total_energy == pytest.approx(ref.records[-1].total_energy, rel=1e-6)
    assert pr.summary()["iterates"][0]["delta"] is None
    assert math.isclose(pr.final.Q[-1], ref.records[-1].Q, rel_tol=1e-6)
