import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnarlab.errors import DomainMismatch, KernelTooWide
from dnarlab.hydro1d import (GridField1D, HydroConfig, PeriodicOffset, TensorBump, bump_family, compute_u,
                             conservation_summary, e_monitor, eam_residual, kinetic_residual, l1_difference,
                             offset_field, restrict, smooth_initial_field, solve, step, write_snapshots_csv)
from dnarlab.kernel import Quadratic, SmoothCompact, WeaklySingular

SC = SmoothCompact(0.2, 1.0, 1)


def smooth_run(M, T=0.5, records=200, kernel=SC):
    cfg = HydroConfig(kernel, T=T, record_dt=T / records)
    return solve(smooth_initial_field(1.0, M, 0.3, 0.05), cfg), cfg.offset(1.0)


# -- the windowed periodic offset ---------------------------------------------------

def test_window_validation():
    with pytest.raises(KernelTooWide):
        PeriodicOffset(SC, 1.0, 0.2, 0.5)
    with pytest.raises(KernelTooWide):
        PeriodicOffset(SC, 1.0, 0.3, 0.2)
    with pytest.raises(KernelTooWide):
        HydroConfig(SmoothCompact(0.6), T=1.0).offset(1.0)
    with pytest.raises(ValueError):
        PeriodicOffset(SmoothCompact(0.2, 1.0, 2), 1.0, 0.2, 0.4)


def test_config_validation():
    for bad in (dict(cfl=0.0), dict(cfl=1.5), dict(limiter="superbee"), dict(T=0.0)):
        kw = dict(kernel=SC, T=1.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            HydroConfig(**kw)


@pytest.mark.parametrize("kernel", [Quadratic(1.0), WeaklySingular(0.5), SC], ids=repr)
def test_offset_derivative_matches_finite_differences(kernel):
    off = PeriodicOffset(kernel, 1.0, 0.2, 0.45)
    z = np.linspace(-0.99, 0.99, 4001)
    z = z[np.abs(z) > 0.01]
    h = 1e-6
    fd = (off.g(z + h) - off.g(z - h)) / (2 * h)
    np.testing.assert_allclose(off.dg(z), fd, atol=1e-6)


def test_offset_is_odd_periodic_and_windowed():
    off = PeriodicOffset(Quadratic(1.0), 1.0, 0.2, 0.45)
    z = np.linspace(-2, 2, 401)
    np.testing.assert_allclose(off.g(z), -off.g(-z), atol=1e-15)
    np.testing.assert_allclose(off.g(z), off.g(z + 1.0), atol=1e-12)
    assert np.all(off.g(np.array([0.46, 0.5, -0.47])) == 0.0)
    np.testing.assert_allclose(off.g(np.array([0.1])), [0.1])  # K'(z) = z inside the window


def test_fft_convolution_matches_direct_sum():
    field = smooth_initial_field(1.0, 64, 0.4, 0.1)
    off = PeriodicOffset(SC, 1.0, 0.2, 0.45)
    direct = np.array([np.sum(off.g(xi - field.centers) * field.rho) * field.dx for xi in field.centers])
    np.testing.assert_allclose(offset_field(field, off), direct, atol=1e-15)
    other = PeriodicOffset(SC, 2.0, 0.2, 0.45)
    with pytest.raises(DomainMismatch):
        offset_field(field, other)


# -- conservation and steady states ---------------------------------------------------

def test_uniform_state_is_steady_to_round_off():
    M = 128
    off = PeriodicOffset(SC, 1.0, 0.2, 0.45)
    fld = GridField1D(1.0, np.full(M, 1.0), np.full(M, 0.3))
    for _ in range(2000):
        fld = step(fld, off, dt=1e-3)
    assert np.max(np.abs(fld.rho - 1.0)) <= 1e-13
    assert np.max(np.abs(fld.w - 0.3)) <= 1e-13


@given(st.floats(0.0, 0.6), st.floats(-0.5, 0.5), st.sampled_from(["none", "minmod"]))
def test_mass_conservation_and_w_bounds(rho_amp, w_amp, limiter):
    fld = smooth_initial_field(1.0, 64, rho_amp, w_amp)
    sol = solve(fld, HydroConfig(SC, T=0.2, limiter=limiter, record_dt=0.05))
    summary = conservation_summary(sol)
    assert summary["relative_mass_drift"] <= 1e-13
    assert sol.w.max() <= fld.w.max() + 1e-12
    assert sol.w.min() >= fld.w.min() - 1e-12
    assert sol.rho.min() >= 0.0


def test_records_land_on_requested_times():
    sol, _ = smooth_run(64, T=0.3, records=3)
    np.testing.assert_allclose(sol.times, [0.0, 0.1, 0.2, 0.3], atol=1e-15)


def test_vacuum_is_handled():
    M = 64
    rho = np.where(np.arange(M) < M // 2, 2.0, 0.0)
    sol = solve(GridField1D(1.0, rho, np.full(M, 0.1)), HydroConfig(SC, T=0.2, record_dt=0.1))
    assert np.all(np.isfinite(sol.rho)) and np.all(np.isfinite(sol.w))
    assert conservation_summary(sol)["relative_mass_drift"] <= 1e-13


def test_first_order_self_convergence():
    fine = [smooth_run(M, T=0.5, records=1)[0] for M in (64, 128, 256)]
    e1 = l1_difference(fine[0].rho[-1], fine[1].rho[-1], 1.0)
    e2 = l1_difference(fine[1].rho[-1], fine[2].rho[-1], 1.0)
    assert e1 / e2 > 1.7


def test_restrict_averages_pairs():
    np.testing.assert_array_equal(restrict(np.array([1.0, 3.0, 5.0, 7.0])), [2.0, 6.0])


def test_interpolants_reproduce_cell_values():
    sol, _ = smooth_run(32, T=0.1, records=2)
    np.testing.assert_allclose(sol.rho_at(0.1, sol.centers), sol.rho[-1], atol=1e-15)
    np.testing.assert_allclose(sol.u_at(0.0, sol.centers + 1.0), sol.u[0], atol=1e-14)
    np.testing.assert_allclose(sol.u[0], compute_u(sol.field(0), HydroConfig(SC, T=1.0).offset(1.0)))


# -- weak-form diagnostics ------------------------------------------------------------

def test_bump_family_shape_and_support():
    fam = bump_family(1.0, 1.0, -0.1, 0.1)
    assert len(fam) == 27
    for eta in fam:
        assert eta.value(1.0, np.array([0.5]), np.array([0.0]))[0] == 0.0  # every bump vanishes at T


def test_tensor_bump_derivatives():
    eta = TensorBump(0.3, 0.5, 0.4, 0.3, 0.0, 1.0, 1.0)
    t, x, w, h = 0.35, np.array([0.45]), np.array([0.2]), 1e-6
    assert eta.dt(t, x, w)[0] == pytest.approx((eta.value(t + h, x, w) - eta.value(t - h, x, w))[0] / (2 * h), abs=1e-7)
    assert eta.dx(t, x, w)[0] == pytest.approx((eta.value(t, x + h, w) - eta.value(t, x - h, w))[0] / (2 * h), abs=1e-7)


def test_kinetic_residual_zero_test_function():
    sol, _ = smooth_run(32, T=0.1, records=4)
    worst, vals = kinetic_residual(sol, family=[0, 0.0], return_all=True)
    assert worst == 0.0 and vals.tolist() == [0.0, 0.0]


def test_kinetic_residual_decreases_and_detects_wrong_velocity():
    res = [kinetic_residual(smooth_run(M)[0]) for M in (64, 128, 256)]
    assert res[0] > res[1] > res[2]
    sol, _ = smooth_run(256)
    sol.u = sol.u + 0.05  # no longer the transport velocity of the data
    assert kinetic_residual(sol) > 20 * res[2]


def test_eam_residual_small_and_decreasing():
    r = [eam_residual(*smooth_run(M)) for M in (64, 128, 256)]
    assert r[0] > r[1] > r[2]
    assert r[2] < 1e-4


def test_e_monitor_conserves_integral():
    sol, off = smooth_run(128, records=50)
    mon = e_monitor(sol, psi=off.dg)
    assert mon["max_integral_drift"] <= 1e-14
    assert np.max(np.abs(mon["difference_form_e_integral"])) <= 1e-12


def test_e_monitor_nonlocal_forms_under_refinement():
    # D_x u + psi * rho tracks D_x w and is transported by u; the difference form is not
    mons = [e_monitor(s, psi=o.dg) for s, o in (smooth_run(M) for M in (128, 256))]
    assert mons[1]["nonlocal_e_gap"] < 0.6 * mons[0]["nonlocal_e_gap"]
    assert mons[1]["max_residual_l1"] < 0.6 * mons[0]["max_residual_l1"]
    assert np.max(mons[1]["nonlocal_e_residual_l1"]) < 0.6 * np.max(mons[0]["nonlocal_e_residual_l1"])
    assert np.max(mons[1]["difference_form_e_residual_l1"]) > 10 * np.max(mons[1]["nonlocal_e_residual_l1"])


def test_snapshot_csv(tmp_path):
    sol, _ = smooth_run(16, T=0.1, records=2)
    path = tmp_path / "s.csv"
    write_snapshots_csv(sol, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "cell_center", "rho", "w", "u"]
    assert len(rows) == 1 + 16 * 3
