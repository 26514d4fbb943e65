"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``CRITERION k: PASS|FAIL ...`` line that the terminal
summary prints in order, then asserts the outcome.
"""
import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dnarlab.errors import MarginalMismatch
from dnarlab.hydro1d import (GridField1D, HydroConfig, PeriodicOffset, conservation_summary, kinetic_residual,
                             l1_difference, restrict, smooth_initial_field, solve, step)
from dnarlab.kernel import FromKernel, Quadratic, ScalarBump, SmoothCompact, WeaklySingular, check_kernel
from dnarlab.meanfield import (contractivity_study, convergence_in_N, equilibrium_study, quadratic_oracle,
                               twin_ensembles)
from dnarlab.particle import (IntegratorConfig, ParticleEnsemble, diagnostics, equivalence_check, integrate_cs,
                              integrate_dnar, sample_ensemble)
from dnarlab.transport import DiscreteMeasure, FiberedMeasure, adapted_w2, dbl, dbl_lp, fibered_w2, w1, w2

SC = SmoothCompact(0.2, 1.0, 1)


def verdict(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_kernel_validity():
    specs = [Quadratic(1.0, 1), Quadratic(2.0, 3), WeaklySingular(0.5, 1), WeaklySingular(0.3, 2),
             SmoothCompact(1.0, 1.0, 1), SmoothCompact(0.5, 2.0, 2), ScalarBump(1.0, 1.0, 1), ScalarBump(0.7, 1.0, 2)]
    specs += [FromKernel(s) for s in specs if hasattr(s, "hess")]
    worst_time, failures = 0.0, []
    for spec in specs:
        t0 = time.perf_counter()
        rep = check_kernel(spec, samples=1000, seed=1)
        worst_time = max(worst_time, time.perf_counter() - t0)
        if not rep.passed:
            failures.append(repr(spec))
    verdict(1, not failures and worst_time < 1.0,
            f"{len(specs)} kernels/weights, failures={failures}, slowest check {worst_time:.3f}s")


def test_criterion_2_micro_equivalence():
    ens = sample_ensemble(np.random.default_rng(2), 16, 2, "gaussian", 1.0, 0.5)
    t0 = time.perf_counter()
    g1 = equivalence_check(ens, Quadratic(1.0, 2), IntegratorConfig(1e-3, 1.0))["max_position_gap"]
    g2 = equivalence_check(ens, Quadratic(1.0, 2), IntegratorConfig(5e-4, 1.0))["max_position_gap"]
    elapsed = time.perf_counter() - t0
    ratio = g1 / g2 if g2 > 0 else float("inf")
    verdict(2, g1 <= 1e-6 and ratio >= 12 and elapsed < 5.0,
            f"gap(dt=1e-3)={g1:.3e} gap(dt=5e-4)={g2:.3e} ratio={ratio:.2f} (need >=12) time {elapsed:.2f}s")


def test_criterion_3_dissipation_and_conservation():
    rng = np.random.default_rng(3)
    details, ok = [], True
    for weight in (ScalarBump(1.5, 1.0, 2), FromKernel(Quadratic(1.0, 2))):
        ens = sample_ensemble(rng, 24, 2, "gaussian", 1.0, 0.5)
        ens.v = rng.normal(size=ens.x.shape)
        dt, T = 1e-2, 2.0
        diag = diagnostics(integrate_cs(ens, weight, IntegratorConfig(dt, T, record_every=1)))
        rise = float(np.max(np.diff(diag["kinetic_energy"])))
        drift = float(np.max(np.abs(diag["momentum"] - diag["momentum"][0]))) / T
        ok = ok and rise <= 1e-9 and drift <= 1e-10
        details.append(f"{type(weight).__name__}: max KE rise/step {rise:.1e}, momentum drift/time {drift:.1e}")
    verdict(3, ok, "; ".join(details))


def _brute(mu, nu, p):
    n = len(mu.weights)
    D = np.linalg.norm(mu.points[:, None, :] - nu.points[None, :, :], axis=-1) ** p
    best = min(D[np.arange(n), list(perm)].sum() for perm in itertools.permutations(range(n)))
    return (best / n) ** (1.0 / p)


def test_criterion_4_ot_oracles():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    err_w, err_dbl, axiom = 0.0, 0.0, 0.0
    for _ in range(200):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        mu, nu, rho = (DiscreteMeasure.uniform(rng.normal(0, rng.uniform(0.2, 3.0), (n, d))) for _ in range(3))
        err_w = max(err_w, abs(w2(mu, nu) - _brute(mu, nu, 2)), abs(w1(mu, nu) - _brute(mu, nu, 1)))
        err_dbl = max(err_dbl, abs(dbl(mu, nu) - dbl_lp(mu, nu)))
        for f in (w2, w1, dbl):
            axiom = max(axiom, f(mu, mu), abs(f(mu, nu) - f(nu, mu)), f(mu, rho) - f(mu, nu) - f(nu, rho))
        axiom = max(axiom, dbl(mu, nu) - w1(mu, nu), w1(mu, nu) - w2(mu, nu))
    elapsed = time.perf_counter() - t0
    verdict(4, err_w <= 1e-12 and err_dbl <= 1e-8 and axiom <= 1e-9 and elapsed < 30,
            f"brute-force error {err_w:.1e}, dbl LP error {err_dbl:.1e}, axiom/chain violation {axiom:.1e}, "
            f"time {elapsed:.1f}s")


def test_criterion_5_adapted_fibered_consistency():
    rng = np.random.default_rng(5)
    worst, violations = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        omega = rng.normal(size=(n, 1))
        A = FiberedMeasure.from_atoms(rng.normal(size=(n, 1)), omega)
        B = FiberedMeasure.from_atoms(rng.normal(size=(n, 1)), omega.copy())
        gap = abs(adapted_w2(A, B) - fibered_w2(A, B))
        worst = max(worst, gap)
        violations += gap > 1e-9
    mismatch_ok = True
    for _ in range(20):
        n = int(rng.integers(1, 5))
        A = FiberedMeasure.from_atoms(rng.normal(size=(n, 1)), rng.normal(size=(n, 1)))
        B = FiberedMeasure.from_atoms(rng.normal(size=(n, 1)), rng.normal(size=(n, 1)))
        mismatch_ok = mismatch_ok and np.isfinite(adapted_w2(A, B))
        try:
            fibered_w2(A, B)
            mismatch_ok = False
        except MarginalMismatch:
            pass
    verdict(5, violations == 0 and mismatch_ok,
            f"matching marginals: {violations}/100 pairs with |AW2 - W2nu| > 1e-9 (max {worst:.3e}); "
            f"non-matching marginals handled: {mismatch_ok}")


def test_criterion_6_quadratic_oracle():
    rng = np.random.default_rng(6)
    ens = sample_ensemble(rng, 64, 2, "gaussian", 1.0, 0.5)
    traj = integrate_dnar(ens, Quadratic(1.0, 2), IntegratorConfig(1e-3, 5.0, record_every=50))
    err = max(float(np.max(np.abs(traj.x[k] - quadratic_oracle(ens, 1.0, t)))) for k, t in enumerate(traj.times))
    om = ens.omega - ens.omega.mean(axis=0)
    rep = equilibrium_study(ParticleEnsemble(ens.x, None, om), Quadratic(1.0, 2),
                            IntegratorConfig(1e-3, 20.0, record_every=100))
    gap = rep.fitted["final_gap"]
    verdict(6, err <= 1e-8 and gap <= 1e-6, f"oracle error {err:.2e}, equilibrium gap at T=20 {gap:.2e}")


def test_criterion_7_contractivity():
    e1, e2 = twin_ensembles(np.random.default_rng(7), 32, d=2)
    q = contractivity_study(e1, e2, Quadratic(1.0, 2), IntegratorConfig(1e-3, 5.0, record_every=10))
    s1, s2 = twin_ensembles(np.random.default_rng(8), 16, d=2)
    ws = contractivity_study(s1, s2, WeaklySingular(0.5, 2), IntegratorConfig(1e-3, 3.0, record_every=10))
    rate = q.fitted["rate"]
    ok = (abs(rate - 1.0) <= 0.02 and q.fitted["max_increase"] <= 1e-9 and ws.fitted["rate"] > 0
          and ws.fitted["D0"] > 0 and q.passed["rate_ge_c0"] is not None and q.passed["rate_ge_2c0"] is not None)
    verdict(7, ok,
            f"Quadratic rate {rate:.4f} (max increase {q.fitted['max_increase']:.1e}, rate>=lambda "
            f"{q.passed['rate_ge_c0']}, rate>=2lambda {q.passed['rate_ge_2c0']}); WeaklySingular rate "
            f"{ws.fitted['rate']:.3f}, D0 {ws.fitted['D0']:.3f}, c0 {ws.fitted['c0']:.3f}")


def test_criterion_8_hydro_solver():
    t0 = time.perf_counter()
    M = 256
    off = PeriodicOffset(SC, 1.0, 0.2, 0.45)
    fld = GridField1D(1.0, np.full(M, 1.0), np.full(M, 0.3))
    for _ in range(10_000):
        fld = step(fld, off, dt=1e-3)
    steady = max(float(np.max(np.abs(fld.rho - 1.0))), float(np.max(np.abs(fld.w - 0.3))))
    sols = [solve(smooth_initial_field(1.0, m, 0.3, 0.05), HydroConfig(SC, T=1.0, record_dt=0.05))
            for m in (256, 512, 1024)]
    drift = max(conservation_summary(s)["relative_mass_drift"] for s in sols)
    w_excess = max(max(s.w.max() - s.w[0].max(), s.w[0].min() - s.w.min()) for s in sols)
    ratios = []
    for name in ("rho", "w"):
        e = [l1_difference(getattr(a, name)[-1], getattr(b, name)[-1], 1.0) for a, b in zip(sols, sols[1:])]
        ratios.append(e[0] / e[1])
    elapsed = time.perf_counter() - t0
    ok = steady <= 1e-12 and drift <= 1e-12 and w_excess <= 1e-10 and min(ratios) >= 1.8 and elapsed < 60
    verdict(8, ok, f"steady-state deviation after 1e4 steps {steady:.1e}, mass drift {drift:.1e}, "
                   f"w max-principle excess {w_excess:.1e}, L1 ratios rho {ratios[0]:.2f} w {ratios[1]:.2f}, "
                   f"time {elapsed:.1f}s")


def test_criterion_9_monokinetic_residual():
    res = []
    for M in (256, 512, 1024):
        sol = solve(smooth_initial_field(1.0, M, 0.3, 0.05), HydroConfig(SC, T=1.0, record_dt=1.0 / 400))
        res.append(kinetic_residual(sol))
    ok = res[0] > res[1] > res[2] and res[2] <= 1e-3
    verdict(9, ok, "residuals " + ", ".join(f"{r:.2e}" for r in res))


@pytest.mark.slow
def test_criterion_10_mean_field_study():
    t0 = time.perf_counter()
    cfg = HydroConfig(SC, T=1.0, record_dt=0.01)
    ref = solve(smooth_initial_field(1.0, 4096, 0.3, 0.05), cfg)
    rep = convergence_in_N(ref, cfg.offset(1.0), [50, 100, 200, 400, 800], seeds=8, master_seed=0, dt=0.01)
    elapsed = time.perf_counter() - t0
    sup_E = rep.series["median_sup_E"]
    ok = all(rep.passed.values()) and elapsed < 600
    verdict(10, ok, f"median sup E {[f'{v:.2e}' for v in sup_E]}, slope E2 {rep.fitted['slope_sup_E2']:.2f}, "
                    f"slope E {rep.fitted['slope_sup_E']:.2f}, max E1(0) {rep.series['max_E1_0']}, "
                    f"median amplification {[f'{c:.2f}' for c in rep.fitted['median_C_observed']]}, "
                    f"time {elapsed:.0f}s")
