"""First-order DNAR particles and second-order Cucker-Smale-type alignment.

DNAR:  x_i' = v_i,  w_i' = 0,  v_i = w_i - (1/N) sum_j grad K(x_i - x_j)
CS:    x_i' = v_i,  v_i' = (1/N) sum_{j != i} Psi(x_i - x_j) (v_j - v_i)

Both integrators accept an optional ``period``; differences then use the
minimal-image convention on the torus [0, period)^d and recorded positions
are wrapped into the fundamental cell.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import NonFiniteState
from .kernel import FromKernel, weight_function


@dataclass
class ParticleEnsemble:
    x: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float)) if self.v is not None else np.zeros_like(self.x)
        self.omega = (np.atleast_2d(np.asarray(self.omega, dtype=float))
                      if self.omega is not None else np.zeros_like(self.x))
        if not (self.x.shape == self.v.shape == self.omega.shape):
            raise ValueError("x, v and omega must share the shape (N, d)")
        if self.x.shape[0] < 1 or self.x.shape[1] < 1:
            raise ValueError("need N >= 1 and d >= 1")
        for name in ("x", "v", "omega"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteState(f"non-finite entries in {name}")

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.x.copy(), self.v.copy(), self.omega.copy(), self.t)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    T: float
    scheme: str = "rk4"
    record_every: int = 1

    def __post_init__(self):
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))


@dataclass(frozen=True)
class Trajectory:
    """Recorded states; ``omega`` is the constant desired-velocity array."""

    mode: str
    times: np.ndarray
    x: np.ndarray  # (R, N, d)
    v: np.ndarray  # (R, N, d)
    omega: np.ndarray  # (N, d)
    period: float | None = None
    meta: dict = field(default_factory=dict)

    def ensemble(self, k: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.x[k], self.v[k], self.omega, float(self.times[k]))

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensemble(-1)


def pairwise_differences(x: np.ndarray, period: float | None = None) -> np.ndarray:
    """diff[i, j] = x_i - x_j, minimal image when ``period`` is set."""
    diff = x[:, None, :] - x[None, :, :]
    if period is not None:
        diff -= period * np.round(diff / period)
    return diff


def dnar_velocity(ens_or_x, kernel, omega=None, period: float | None = None) -> np.ndarray:
    """v_i = omega_i - (1/N) sum_j grad K(x_i - x_j), self term included (it is 0)."""
    if isinstance(ens_or_x, ParticleEnsemble):
        x, omega = ens_or_x.x, ens_or_x.omega
    else:
        x = np.asarray(ens_or_x, dtype=float)
    N = x.shape[0]
    g = kernel.grad(pairwise_differences(x, period))
    return omega - g.sum(axis=1) / N


@lru_cache(maxsize=16)
def _pairs(N: int):
    return np.triu_indices(N, 1)


def cs_rhs(ens_or_x, psi, v=None, period: float | None = None) -> np.ndarray:
    """a_i = (1/N) sum_{j != i} Psi(x_i - x_j)(v_j - v_i).

    Weights are even, so each unordered pair is evaluated once and its
    contribution is added to i and subtracted from j.
    """
    if isinstance(ens_or_x, ParticleEnsemble):
        x, v = ens_or_x.x, ens_or_x.v
    else:
        x = np.asarray(ens_or_x, dtype=float)
    N, d = x.shape
    weight = weight_function(psi)
    if N == 1:
        return np.zeros_like(v)
    iu, ju = _pairs(N)
    diff = x[iu] - x[ju]
    if period is not None:
        diff -= period * np.round(diff / period)
    f = np.einsum("kab,kb->ka", weight(diff), v[ju] - v[iu])
    out = np.empty((N, d))
    for a in range(d):
        out[:, a] = np.bincount(iu, f[:, a], N) - np.bincount(ju, f[:, a], N)
    return out / N


def _wrap(x, period):
    return x if period is None else np.mod(x, period)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteState("non-finite particle state")


def _step_sizes(cfg: IntegratorConfig):
    n = cfg.n_steps
    for k in range(n):
        yield min(cfg.dt, cfg.T - k * cfg.dt) if k == n - 1 else cfg.dt


def _integrate(state, rhs, cfg: IntegratorConfig, t0: float):
    """Generic explicit integrator over a tuple of arrays; yields recorded states."""
    t = t0
    n = cfg.n_steps
    yield 0, t, state
    for k, h in enumerate(_step_sizes(cfg), start=1):
        if cfg.scheme == "euler":
            f = rhs(state)
            state = tuple(s + h * a for s, a in zip(state, f))
        else:
            k1 = rhs(state)
            k2 = rhs(tuple(s + 0.5 * h * a for s, a in zip(state, k1)))
            k3 = rhs(tuple(s + 0.5 * h * a for s, a in zip(state, k2)))
            k4 = rhs(tuple(s + h * a for s, a in zip(state, k3)))
            state = tuple(s + h / 6.0 * (a + 2 * b + 2 * c + e)
                          for s, a, b, c, e in zip(state, k1, k2, k3, k4))
        t = t0 + (k * cfg.dt if k < n else cfg.T)
        _check_finite(*state)
        if k % cfg.record_every == 0 or k == n:
            yield k, t, state


def integrate_dnar(ens0: ParticleEnsemble, kernel, cfg: IntegratorConfig,
                   period: float | None = None) -> Trajectory:
    omega = ens0.omega.copy()

    def rhs(state):
        return (dnar_velocity(state[0], kernel, omega, period),)

    times, xs, vs = [], [], []
    for _, t, (x,) in _integrate((ens0.x.copy(),), rhs, cfg, ens0.t):
        times.append(t)
        xs.append(_wrap(x, period))
        vs.append(dnar_velocity(x, kernel, omega, period))
    return Trajectory("dnar", np.array(times), np.array(xs), np.array(vs), omega, period,
                      {"scheme": cfg.scheme, "dt": cfg.dt, "T": cfg.T})


def integrate_cs(ens0: ParticleEnsemble, psi, cfg: IntegratorConfig,
                 period: float | None = None) -> Trajectory:
    def rhs(state):
        x, v = state
        return v, cs_rhs(x, psi, v, period)

    times, xs, vs = [], [], []
    for _, t, (x, v) in _integrate((ens0.x.copy(), ens0.v.copy()), rhs, cfg, ens0.t):
        times.append(t)
        xs.append(_wrap(x, period))
        vs.append(v.copy())
    return Trajectory("cs", np.array(times), np.array(xs), np.array(vs), ens0.omega.copy(), period,
                      {"scheme": cfg.scheme, "dt": cfg.dt, "T": cfg.T})


def equivalence_check(ens0: ParticleEnsemble, kernel, cfg: IntegratorConfig) -> dict:
    """Run DNAR and the differentiated CS system from consistent data and compare."""
    dnar = integrate_dnar(ens0, kernel, cfg)
    start = replace(ens0.copy(), v=dnar_velocity(ens0, kernel))
    cs = integrate_cs(start, FromKernel(kernel), cfg)
    return {
        "max_position_gap": float(np.max(np.linalg.norm(dnar.x - cs.x, axis=-1))),
        "max_velocity_gap": float(np.max(np.linalg.norm(dnar.v - cs.v, axis=-1))),
        "records": len(dnar.times),
    }


def _diameter(points: np.ndarray, period: float | None = None) -> float:
    return float(np.max(np.linalg.norm(pairwise_differences(points, period), axis=-1)))


def diagnostics(traj: Trajectory) -> dict:
    v = traj.v
    return {
        "t": traj.times,
        "kinetic_energy": 0.5 * np.mean(np.sum(v * v, axis=-1), axis=-1),
        "momentum": v.mean(axis=1),
        "velocity_diameter": np.array([_diameter(vk) for vk in v]),
        "position_diameter": np.array([_diameter(xk, traj.period) for xk in traj.x]),
    }


def kinetic_energy_rate(ens: ParticleEnsemble, psi) -> float:
    """Exact d/dt of (1/2N) sum |v_i|^2 for the CS flow; <= 0 when Psi is PSD."""
    N = ens.N
    weight = weight_function(psi)
    diff = pairwise_differences(ens.x)
    iu = ~np.eye(N, dtype=bool)
    dv = ens.v[:, None, :] - ens.v[None, :, :]
    P = weight(diff[iu])
    return float(-np.einsum("ka,kab,kb->", dv[iu], P, dv[iu]) / (2 * N * N))


# -- initial data -----------------------------------------------------------

def uniform_box(rng: np.random.Generator, N: int, d: int, low=-1.0, high=1.0) -> np.ndarray:
    return rng.uniform(low, high, size=(N, d))


def gaussian(rng: np.random.Generator, N: int, d: int, scale=1.0, center=0.0) -> np.ndarray:
    return center + scale * rng.standard_normal((N, d))


def lattice(N: int, d: int, spacing=1.0) -> np.ndarray:
    """First N points of the cubic lattice with the given spacing, centred at 0."""
    side = int(np.ceil(N ** (1.0 / d)))
    axes = [np.arange(side) * spacing for _ in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)[:N]
    return grid - grid.mean(axis=0)


def sample_ensemble(rng: np.random.Generator, N: int, d: int, positions="gaussian",
                    scale=1.0, omega_scale=1.0) -> ParticleEnsemble:
    """Positions from the named sampler, desired velocities i.i.d. Gaussian."""
    if positions == "gaussian":
        x = gaussian(rng, N, d, scale)
    elif positions == "uniform":
        x = uniform_box(rng, N, d, -scale, scale)
    elif positions == "lattice":
        x = lattice(N, d, scale)
    else:
        raise ValueError(f"unknown position sampler {positions!r}")
    omega = omega_scale * rng.standard_normal((N, d))
    return ParticleEnsemble(x, np.zeros_like(x), omega)


# -- output -----------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path) -> None:
    R, N, d = traj.x.shape
    header = ["t", "particle"] + [f"x{k}" for k in range(d)] + [f"v{k}" for k in range(d)] \
        + [f"w{k}" for k in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(R):
            for i in range(N):
                writer.writerow([repr(float(traj.times[r])), i]
                                + [repr(float(c)) for c in traj.x[r, i]]
                                + [repr(float(c)) for c in traj.v[r, i]]
                                + [repr(float(c)) for c in traj.omega[i]])


def trajectory_summary(traj: Trajectory) -> dict:
    diag = diagnostics(traj)
    T = max(float(traj.times[-1] - traj.times[0]), 1e-300)
    mom = diag["momentum"]
    ke = diag["kinetic_energy"]
    return {
        "mode": traj.mode,
        "N": int(traj.x.shape[1]),
        "d": int(traj.x.shape[2]),
        "records": int(len(traj.times)),
        "t_final": float(traj.times[-1]),
        "momentum_drift_per_unit_time": float(np.max(np.linalg.norm(mom - mom[0], axis=-1)) / T),
        "max_kinetic_energy_increase": float(max(np.max(np.diff(ke)), 0.0)) if len(ke) > 1 else 0.0,
        "final_velocity_diameter": float(diag["velocity_diameter"][-1]),
        "max_position_diameter": float(np.max(diag["position_diameter"])),
        **traj.meta,
    }


def write_trajectory_summary(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        json.dump(trajectory_summary(traj), fh, indent=2, sort_keys=True)
