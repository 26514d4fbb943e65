"""Study harnesses for the particle-to-continuum limits.

The main entry points are:

* ``cc_error_series`` and ``cc_bound_check`` build the modulated error
  E = E1 + E2 between a Cucker-Smale ensemble and a hydrodynamic reference
  and check its growth;
* ``convergence_in_N`` repeats that over a grid of particle numbers and seeds;
* ``contractivity_study`` and ``equilibrium_study`` cover the long-time
  behaviour of the first-order DNAR particles.

Every study returns a ``StudyReport`` that keeps the raw series alongside
the fitted numbers.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CenterMismatch, DomainMismatch, MarginalMismatch, NonzeroMeanOmega
from .kernel import Quadratic, WeaklySingular
from .particle import (IntegratorConfig, ParticleEnsemble, Trajectory, diagnostics, integrate_cs,
                       integrate_dnar)
from .transport import DiscreteMeasure, FiberedMeasure, _match_fibers, dbl, fibered_w2, grid_to_measure

TIME_TOL = 1e-9
CENTER_TOL = 1e-12


def jsonable(obj):
    """JSON-safe copy: arrays to lists, numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


@dataclass
class CCErrorSeries:
    times: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    N: int
    meta: dict = field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return self.E1 + self.E2

    @property
    def E0(self) -> float:
        return float(self.E[0])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "E1", "E2", "E"])
            for row in zip(self.times, self.E1, self.E2, self.E):
                wr.writerow([repr(float(v)) for v in row])


@dataclass
class StudyReport:
    kind: str
    params: dict
    fitted: dict
    series: dict
    passed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable({"kind": self.kind, "params": self.params, "fitted": self.fitted,
                          "passed": self.passed, "series": self.series})

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")


# -- modulated error ---------------------------------------------------------

def cc_error_series(traj: Trajectory, reference, every: int = 1) -> CCErrorSeries:
    """E1 = mean |u(x_i) - v_i|^2 and E2 = dbl(empirical, reference)^2 per record.

    ``reference`` is a HydroSolution on the torus [0, L). Particle record
    times must coincide with reference record times.
    """
    if traj.x.shape[1] < 1:
        raise ValueError("need at least one particle")
    if traj.x.shape[2] != 1:
        raise DomainMismatch("the hydrodynamic reference is one-dimensional")
    L = reference.L
    if traj.period is None:
        if np.any(traj.x < 0.0) or np.any(traj.x >= L):
            raise DomainMismatch("particles left the reference domain [0, L)")
    elif abs(traj.period - L) > 1e-12 * L:
        raise DomainMismatch(f"particle period {traj.period} differs from reference length {L}")
    idx = np.arange(0, len(traj.times), max(int(every), 1))
    if idx[-1] != len(traj.times) - 1:
        idx = np.append(idx, len(traj.times) - 1)
    t_ref = reference.times
    E1, E2, times = [], [], []
    for k in idx:
        t = float(traj.times[k])
        j = reference.record_index(t)
        if abs(t_ref[j] - t) > TIME_TOL * max(1.0, abs(t)):
            raise DomainMismatch(f"no reference record at t = {t} (nearest {t_ref[j]})")
        x = traj.x[k, :, 0]
        v = traj.v[k, :, 0]
        E1.append(float(np.mean((reference.u_at(t, x) - v) ** 2)))
        emp = DiscreteMeasure.uniform(x[:, None])
        E2.append(dbl(emp, grid_to_measure(reference.field(j)), period=L) ** 2)
        times.append(t)
    return CCErrorSeries(np.array(times), np.array(E1), np.array(E2), traj.x.shape[1],
                         {"reference_M": reference.M, "L": L})


def cc_bound_check(series: CCErrorSeries, C_config: float | None = None, eps: float = 1e-14,
                   floor: float = 0.0) -> dict:
    """Observed amplification max E / max(E(0), eps) and the Gronwall exponent.

    ``kappa`` is the smallest exponent with E(t) <= E(0) exp(kappa t) + floor
    on the recorded times. When E(0) < eps the check switches to absolute
    levels.
    """
    if len(series.times) == 0:
        raise ValueError("empty series")
    E = series.E
    E0 = float(E[0])
    Emax = float(np.max(E))
    out = {"E0": E0, "max_E": Emax, "C_observed": Emax / max(E0, eps), "floor": floor}
    if E0 < eps:
        out["mode"] = "absolute"
        out["kappa"] = None
        out["within_floor"] = bool(Emax <= max(floor, eps))
        out["within_C"] = None
        return out
    out["mode"] = "relative"
    t = series.times - series.times[0]
    excess = np.maximum(E - floor, 0.0)
    pos = (t > 0) & (excess > 0)
    kappa = float(np.max(np.log(excess[pos] / E0) / t[pos])) if np.any(pos) else 0.0
    out["kappa"] = max(kappa, 0.0)
    out["within_C"] = None if C_config is None else bool(np.all(E <= C_config * E0 + floor))
    return out


def characteristic_ensemble(reference, N: int, rng: np.random.Generator) -> ParticleEnsemble:
    """Sample x_i from rho_0 and put v_i = u_0(x_i), omega_i = w_0(x_i).

    A cell is drawn with probability equal to its mass, then a uniform point
    within it.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    masses = reference.rho[0] * reference.dx
    cells = rng.choice(reference.M, size=N, p=masses / masses.sum())
    x = (cells + rng.uniform(0.0, 1.0, size=N)) * reference.dx
    x = np.mod(x, reference.L)
    t0 = float(reference.times[0])
    v = reference.u_at(t0, x)
    w = reference.w_at(t0, x)
    return ParticleEnsemble(x[:, None], v[:, None], w[:, None], t0)


def momentum_functional(x, v, reference, k: int) -> float:
    """max over phi in {1, cos, sin} of |mean phi(x_i) v_i - int phi u rho|."""
    L = reference.L
    c = reference.centers
    rho_u = reference.rho[k] * reference.u[k] * reference.dx
    worst = 0.0
    for phi in (lambda z: np.ones_like(z), lambda z: np.cos(2 * np.pi * z / L),
                lambda z: np.sin(2 * np.pi * z / L)):
        worst = max(worst, abs(float(np.mean(phi(x) * v)) - float(np.sum(phi(c) * rho_u))))
    return worst


def run_seed_stream(master_seed: int, *counters: int) -> np.random.Generator:
    """Counter-based stream: adding runs never changes existing ones."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & (2**64 - 1), *map(int, counters)]))


def _cc_run(args):
    reference, offset, N, seed_index, master_seed, dt, T = args
    rng = run_seed_stream(master_seed, N, seed_index)
    ens = characteristic_ensemble(reference, N, rng)
    cfg = IntegratorConfig(dt=dt, T=T)
    traj = integrate_cs(ens, offset, cfg, period=reference.L)
    series = cc_error_series(traj, reference)
    mf2 = max(momentum_functional(traj.x[k, :, 0], traj.v[k, :, 0], reference, reference.record_index(t))
              for k, t in enumerate(traj.times))
    return {
        "N": N, "seed_index": seed_index, "times": series.times, "E1": series.E1, "E2": series.E2,
        "sup_E": float(np.max(series.E)), "sup_E1": float(np.max(series.E1)),
        "sup_E2": float(np.max(series.E2)), "E1_0": float(series.E1[0]), "E2_0": float(series.E2[0]),
        "mf2": mf2, "bound": cc_bound_check(series),
    }


def log_slope(N, values) -> float:
    N = np.asarray(N, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(N[keep]), np.log(values[keep]), 1)[0])


def convergence_in_N(reference, offset, N_list=(50, 100, 200, 400, 800), seeds: int = 8,
                     master_seed: int = 0, dt: float = 1e-2, T: float | None = None,
                     workers: int = 1, slope_threshold: float = -0.5) -> StudyReport:
    """Median over seeds of sup_t E(t) against N, with log-log slopes.

    ``offset`` supplies the alignment weight for the particles; it must match
    the one used to build ``reference``.
    """
    N_list = [int(n) for n in N_list]
    if len(N_list) < 3 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N list must be increasing with at least 3 entries")
    if T is None:
        T = float(reference.times[-1] - reference.times[0])
    jobs = [(reference, offset, N, s, master_seed, dt, T) for N in N_list for s in range(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_cc_run, jobs))
    else:
        runs = [_cc_run(j) for j in jobs]

    def med(key):
        return [float(np.median([r[key] for r in runs if r["N"] == N])) for N in N_list]

    sup_E, sup_E1, sup_E2 = med("sup_E"), med("sup_E1"), med("sup_E2")
    E2_0, mf2 = med("E2_0"), med("mf2")
    C_obs = [float(np.median([r["bound"]["C_observed"] for r in runs if r["N"] == N])) for N in N_list]
    fitted = {
        "slope_sup_E": log_slope(N_list, sup_E),
        "slope_sup_E2": log_slope(N_list, sup_E2),
        "slope_sup_E1": log_slope(N_list, sup_E1),
        "slope_E2_0": log_slope(N_list, E2_0),
        "slope_mf2": log_slope(N_list, mf2),
        "median_C_observed": C_obs,
    }
    max_E1_0 = max(r["E1_0"] for r in runs)
    passed = {
        "sup_E_nonincreasing": bool(all(b <= a for a, b in zip(sup_E, sup_E[1:]))),
        "slope_E2_ok": bool(fitted["slope_sup_E2"] <= slope_threshold),
        "E1_zero_at_start": bool(max_E1_0 == 0.0),
    }
    series = {
        "N": N_list, "median_sup_E": sup_E, "median_sup_E1": sup_E1, "median_sup_E2": sup_E2,
        "median_E2_0": E2_0, "median_mf2": mf2, "max_E1_0": max_E1_0,
        "runs": [{k: r[k] for k in ("N", "seed_index", "times", "E1", "E2")} for r in runs],
    }
    params = {"N_list": N_list, "seeds": seeds, "master_seed": master_seed, "dt": dt, "T": T,
              "reference_M": reference.M, "L": reference.L, "slope_threshold": slope_threshold,
              "offset": repr(offset)}
    return StudyReport("convergence_in_N", params, fitted, series, passed)


# -- long-time behaviour of DNAR particles -----------------------------------

def fit_decay_rate(times, values, trim: float = 0.05) -> float:
    """Least-squares rate r in values ~ exp(-r t), dropping trim*n samples at each end."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    n = len(t)
    cut = int(np.floor(trim * n))
    sel = slice(cut, n - cut if cut > 0 else n)
    t, y = t[sel], y[sel]
    keep = y > 0
    if keep.sum() < 2:
        return float("nan")
    return float(-np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def _sample_indices(n: int, max_samples: int) -> np.ndarray:
    if n <= max_samples:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, max_samples)).astype(int))


def quadratic_oracle(ens0: ParticleEnsemble, lam: float, t: float) -> np.ndarray:
    """Exact DNAR positions for K = (lam/2)|x|^2."""
    x0, om = ens0.x, ens0.omega
    xbar0, ombar = x0.mean(axis=0), om.mean(axis=0)
    e = np.exp(-lam * t)
    xbar = xbar0 + ombar * t
    return xbar + (x0 - xbar0) * e + (om - ombar) * (1.0 - e) / lam


def twin_ensembles(rng: np.random.Generator, N: int, d: int = 1, spread: float = 1.0,
                   omega_scale: float = 0.5) -> tuple[ParticleEnsemble, ParticleEnsemble]:
    """Two ensembles with identical omega lists and equal centres of mass."""
    omega = rng.normal(0.0, omega_scale, size=(N, d))
    x1 = rng.uniform(-spread, spread, size=(N, d))
    x2 = rng.uniform(-spread, spread, size=(N, d))
    x2 += x1.mean(axis=0) - x2.mean(axis=0)
    return ParticleEnsemble(x1, None, omega), ParticleEnsemble(x2, None, omega.copy())


def _fibered(x, omega):
    return FiberedMeasure.from_atoms(x, omega)


def contractivity_study(ens1: ParticleEnsemble, ens2: ParticleEnsemble, kernel, cfg: IntegratorConfig,
                        max_samples: int = 400, monotone_tol: float = 1e-9, rate_rtol: float = 0.02) -> StudyReport:
    """Fibered W2 distance between two DNAR runs sharing omega and centre of mass.

    The fitted rate is compared with c0 and 2 c0 up to the relative fit
    tolerance ``rate_rtol``.
    """
    if ens1.x.shape != ens2.x.shape:
        raise MarginalMismatch("ensembles have different sizes")
    A0, B0 = _fibered(ens1.x, ens1.omega), _fibered(ens2.x, ens2.omega)
    _match_fibers(A0, B0)
    gap = float(np.max(np.abs(ens1.x.mean(axis=0) - ens2.x.mean(axis=0))))
    if gap > CENTER_TOL:
        raise CenterMismatch(f"centres of mass differ by {gap:.3e}")

    tr1 = integrate_dnar(ens1, kernel, cfg)
    tr2 = integrate_dnar(ens2, kernel, cfg)
    idx = _sample_indices(len(tr1.times), max_samples)
    t = tr1.times[idx]
    dist = np.array([fibered_w2(_fibered(tr1.x[k], tr1.omega), _fibered(tr2.x[k], tr2.omega)) for k in idx])
    rate = fit_decay_rate(t, dist)

    D0 = max(float(np.max(diagnostics(tr)["position_diameter"])) for tr in (tr1, tr2))
    if isinstance(kernel, Quadratic):
        c0, source = kernel.lam, "lambda"
    elif isinstance(kernel, WeaklySingular):
        c0, source = D0 ** (-kernel.alpha), "D0^-alpha"
    else:
        c0, source = None, None
    increase = float(np.max(np.diff(dist))) if len(dist) > 1 else 0.0
    fitted = {"rate": rate, "c0": c0, "c0_source": source, "D0": D0, "max_increase": increase,
              "initial_distance": float(dist[0]), "final_distance": float(dist[-1])}
    passed = {
        "monotone": bool(increase <= monotone_tol),
        "rate_positive": bool(rate > 0),
        "rate_ge_c0": None if c0 is None else bool(rate >= (1 - rate_rtol) * c0),
        "rate_ge_2c0": None if c0 is None else bool(rate >= (1 - rate_rtol) * 2 * c0),
    }
    params = {"kernel": repr(kernel), "N": ens1.N, "d": ens1.d, "dt": cfg.dt, "T": cfg.T,
              "scheme": cfg.scheme, "trim": 0.05, "rate_rtol": rate_rtol}
    return StudyReport("contractivity", params, fitted, {"t": t, "fibered_w2": dist}, passed)


def equilibrium_study(ens: ParticleEnsemble, kernel, cfg: IntegratorConfig, max_samples: int = 400,
                      gap_tol: float = 1e-6, drift_tol: float = 1e-10) -> StudyReport:
    """Relaxation of DNAR particles with zero mean desired velocity.

    For a quadratic potential the limit is x_bar0 + omega/lam; otherwise the
    final recorded state stands in for the equilibrium.
    """
    ombar = ens.omega.mean(axis=0)
    if np.max(np.abs(ombar)) > CENTER_TOL:
        raise NonzeroMeanOmega(f"mean omega is {ombar.tolist()}, expected 0")
    tr = integrate_dnar(ens, kernel, cfg)
    xbar0 = ens.x.mean(axis=0)
    drift = float(np.max(np.abs(tr.x.mean(axis=1) - xbar0)))
    if isinstance(kernel, Quadratic):
        x_inf = xbar0 + ens.omega / kernel.lam
        analytic = True
    else:
        x_inf = tr.x[-1]
        analytic = False
    final_gap = float(np.max(np.abs(tr.x[-1] - x_inf)))
    target = _fibered(x_inf, ens.omega)
    idx = _sample_indices(len(tr.times), max_samples)
    if not analytic:
        idx = idx[:-1]
    t = tr.times[idx]
    dist = np.array([fibered_w2(_fibered(tr.x[k], tr.omega), target) for k in idx])
    fitted = {"rate": fit_decay_rate(t, dist), "final_gap": final_gap, "center_drift": drift,
              "analytic_equilibrium": analytic}
    passed = {"center_fixed": bool(drift <= drift_tol),
              "reached_equilibrium": bool(final_gap <= gap_tol) if analytic else None}
    params = {"kernel": repr(kernel), "N": ens.N, "d": ens.d, "dt": cfg.dt, "T": cfg.T, "scheme": cfg.scheme}
    series = {"t": t, "fibered_w2": dist, "x_inf": x_inf}
    return StudyReport("equilibrium", params, fitted, series, passed)
