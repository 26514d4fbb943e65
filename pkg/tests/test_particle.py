import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dnarlab.errors import NonFiniteState
from dnarlab.kernel import FromKernel, Quadratic, ScalarBump, SmoothCompact, WeaklySingular
from dnarlab.meanfield import quadratic_oracle
from dnarlab.particle import (IntegratorConfig, ParticleEnsemble, cs_rhs, diagnostics, dnar_velocity,
                              equivalence_check, integrate_cs, integrate_dnar, kinetic_energy_rate, lattice,
                              pairwise_differences, sample_ensemble, trajectory_summary, write_trajectory_csv)


def _ens(seed=0, N=12, d=2, scale=1.0):
    return sample_ensemble(np.random.default_rng(seed), N, d, "gaussian", scale, 0.5)


def _dense_cs_rhs(x, psi, v):
    N = len(x)
    diff = pairwise_differences(x) + np.eye(N)[:, :, None]  # keep the diagonal away from 0
    P = psi.psi(diff)
    P[np.arange(N), np.arange(N)] = 0.0
    return np.einsum("ijab,ijb->ia", P, v[None, :, :] - v[:, None, :]) / N


def test_integrator_config_validation():
    assert IntegratorConfig(0.1, 1.0).n_steps == 10
    assert IntegratorConfig(0.3, 1.0).n_steps == 4
    for bad in (dict(dt=0.0, T=1.0), dict(dt=2.0, T=1.0), dict(dt=0.1, T=1.0, scheme="leapfrog"),
                dict(dt=0.1, T=1.0, record_every=0)):
        with pytest.raises(ValueError):
            IntegratorConfig(**bad)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 2)))
    with pytest.raises(NonFiniteState):
        ParticleEnsemble(np.array([[np.nan]]), None, None)


def test_quadratic_dnar_velocity_closed_form():
    ens = _ens()
    lam = 1.7
    v = dnar_velocity(ens, Quadratic(lam, 2))
    np.testing.assert_allclose(v, ens.omega - lam * (ens.x - ens.x.mean(axis=0)), atol=1e-14)


def test_cs_single_particle_has_no_force():
    x = np.array([[0.3, 0.1]])
    np.testing.assert_array_equal(cs_rhs(x, ScalarBump(1.0, 1.0, 2), np.array([[1.0, 2.0]])), 0.0)


@pytest.mark.parametrize("psi", [FromKernel(Quadratic(1.0, 2)), ScalarBump(1.5, 1.0, 2),
                                 FromKernel(SmoothCompact(1.0, 1.0, 2)), FromKernel(WeaklySingular(0.5, 2))],
                         ids=repr)
def test_cs_rhs_matches_dense_sum(psi):
    ens = _ens(1)
    v = np.random.default_rng(2).normal(size=ens.x.shape)
    np.testing.assert_allclose(cs_rhs(ens.x, psi, v), _dense_cs_rhs(ens.x, psi, v), atol=1e-14)


@given(arrays(np.float64, (8, 2), elements=st.floats(-2, 2)), arrays(np.float64, (8, 2), elements=st.floats(-2, 2)))
def test_cs_forces_sum_to_zero(x, v):
    a = cs_rhs(x, ScalarBump(1.0, 1.0, 2), v)
    assert np.max(np.abs(a.sum(axis=0))) <= 1e-13


@given(arrays(np.float64, (6, 2), elements=st.floats(-2, 2)), arrays(np.float64, (6, 2), elements=st.floats(-2, 2)))
def test_energy_rate_nonpositive_for_psd_weights(x, v):
    ens = ParticleEnsemble(x, v, None)
    for psi in (ScalarBump(1.2, 1.0, 2), FromKernel(Quadratic(0.8, 2))):
        assert kinetic_energy_rate(ens, psi) <= 1e-14
        # the rate is <v, a>/N with a the CS acceleration
        a = cs_rhs(x, psi, v)
        assert kinetic_energy_rate(ens, psi) == pytest.approx(np.sum(v * a) / len(x), abs=1e-12)


def test_rk4_fourth_order_against_oracle():
    ens = _ens(3, N=10)
    k = Quadratic(1.0, 2)
    errs = []
    for dt in (0.1, 0.05):
        traj = integrate_dnar(ens, k, IntegratorConfig(dt, 2.0))
        errs.append(np.max(np.abs(traj.final.x - quadratic_oracle(ens, 1.0, 2.0))))
    assert 12 < errs[0] / errs[1] < 20


def test_euler_first_order_against_oracle():
    ens = _ens(4, N=10)
    k = Quadratic(1.0, 2)
    errs = [np.max(np.abs(integrate_dnar(ens, k, IntegratorConfig(dt, 1.0, "euler")).final.x
                          - quadratic_oracle(ens, 1.0, 1.0))) for dt in (0.01, 0.005)]
    assert 1.8 < errs[0] / errs[1] < 2.2


def test_recording_cadence_and_final_time():
    traj = integrate_dnar(_ens(), Quadratic(1.0, 2), IntegratorConfig(0.03, 1.0, record_every=5))
    assert traj.times[0] == 0.0 and traj.times[-1] == 1.0
    assert len(traj.times) == 8  # 34 steps: records at 0, 5, ..., 30 and 34


def test_periodic_positions_are_wrapped():
    rng = np.random.default_rng(5)
    ens = ParticleEnsemble(rng.uniform(0, 1, (20, 1)), rng.normal(0, 1, (20, 1)), None)
    traj = integrate_cs(ens, ScalarBump(0.3, 1.0, 1), IntegratorConfig(0.01, 2.0), period=1.0)
    assert traj.x.min() >= 0.0 and traj.x.max() < 1.0
    assert traj.period == 1.0


def test_minimal_image_differences():
    x = np.array([[0.05], [0.95]])
    np.testing.assert_allclose(pairwise_differences(x, 1.0)[0, 1], [0.1])


def test_equivalence_gap_is_truncation_error_for_singular_kernel():
    # well-separated 2D configuration: the Hessian stays bounded along the run
    ens = _ens(6, N=8, d=2, scale=1.0)
    gaps = [equivalence_check(ens, WeaklySingular(0.5, 2), IntegratorConfig(dt, 0.5))["max_position_gap"]
            for dt in (0.01, 0.005)]
    assert gaps[0] < 1e-8
    assert gaps[0] / gaps[1] > 12


def test_equivalence_exact_for_quadratic():
    res = equivalence_check(_ens(7, N=16), Quadratic(1.0, 2), IntegratorConfig(1e-2, 1.0))
    assert res["max_position_gap"] < 1e-12
    assert res["max_velocity_gap"] < 1e-12


def test_blow_up_raises_non_finite():
    ens = _ens(8, N=4, scale=10.0)
    with pytest.raises(NonFiniteState):
        integrate_dnar(ens, Quadratic(1e3, 2), IntegratorConfig(0.1, 100.0, "euler"))


def test_cs_dissipation_along_trajectory():
    ens = _ens(9, N=24)
    ens.v = np.random.default_rng(9).normal(size=ens.x.shape)
    traj = integrate_cs(ens, ScalarBump(2.0, 1.0, 2), IntegratorConfig(0.01, 3.0))
    diag = diagnostics(traj)
    assert np.all(np.diff(diag["kinetic_energy"]) <= 1e-12)
    assert np.max(np.abs(diag["momentum"] - diag["momentum"][0])) <= 1e-13
    assert diag["velocity_diameter"][-1] < diag["velocity_diameter"][0]


def test_lattice_is_centred():
    pts = lattice(9, 2, 0.5)
    assert pts.shape == (9, 2)
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=1e-15)


def test_trajectory_csv_and_summary(tmp_path):
    traj = integrate_dnar(_ens(N=3), Quadratic(1.0, 2), IntegratorConfig(0.1, 0.3))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "particle", "x0", "x1", "v0", "v1", "w0", "w1"]
    assert len(rows) == 1 + 3 * len(traj.times)
    assert float(rows[-1][0]) == pytest.approx(0.3)
    summary = trajectory_summary(traj)
    assert summary["N"] == 3 and summary["d"] == 2 and summary["mode"] == "dnar"
