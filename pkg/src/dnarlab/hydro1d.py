"""Periodic 1D finite-volume solver for the macroscopic DNAR system.

    rho_t + (rho u)_x = 0
    (rho w)_t + (rho u w)_x = 0
    u = w - K' * rho

On the torus the offset gradient K' is multiplied by a smooth window that is
1 on [0, inner] and 0 beyond ``outer < L/2``, so that the periodic convolution
is well defined. Its derivative is the scalar communication weight of the
equivalent Euler-alignment system.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainMismatch, KernelTooWide, NonFiniteState

VACUUM = 1e-14
EPS_SPEED = 1e-12


def minimal_image(z, L: float):
    z = np.asarray(z, dtype=float)
    return z - L * np.round(z / L)


@dataclass(frozen=True)
class PeriodicOffset:
    """Windowed offset gradient g(z) = K'(z) chi(|z|) on the torus of length L.

    ``dg`` is the matching scalar communication weight g'(z). ``grad`` and
    ``psi`` accept ``(..., 1)`` arrays so the object can be handed to the
    particle integrators directly.
    """

    kernel: object
    L: float
    inner: float
    outer: float
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.kernel.dim != 1:
            raise ValueError("the hydrodynamic solver is one-dimensional")
        if not (0 < self.inner <= self.outer):
            raise KernelTooWide(f"window must satisfy 0 < inner <= outer, got {self.inner}, {self.outer}")
        if self.outer >= self.L / 2:
            raise KernelTooWide(f"kernel support {self.outer} must be < L/2 = {self.L / 2}")

    def _chi(self, r):
        width = self.outer - self.inner
        if width == 0:
            return (r <= self.inner).astype(float), np.zeros_like(r)
        s = np.clip((r - self.inner) / width, 0.0, 1.0)
        s2 = s * s
        # the derivative vanishes at both clipped ends, so no masking is needed
        return 1.0 - s2 * s * (10.0 - 15.0 * s + 6.0 * s2), -30.0 * s2 * (1.0 - s) ** 2 / width

    def g(self, z):
        z = minimal_image(z, self.L)
        chi, _ = self._chi(np.abs(z))
        return self.kernel.grad(z[..., None])[..., 0] * chi

    def dg(self, z):
        # g is odd, so g' depends on |z| only: K''(r) chi(r) + K'(r) chi'(r)
        r = np.abs(minimal_image(z, self.L))
        chi, dchi = self._chi(r)
        k1, k2 = self.kernel.radial(r)
        return k2 * chi + k1 * dchi

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.g(x[..., 0])[..., None]

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        return self.dg(x[..., 0])[..., None, None]

    def stencil(self, M: int) -> np.ndarray:
        """g at the M periodic grid offsets k*dx (minimal image)."""
        return self.g(np.arange(M) * (self.L / M))


@dataclass
class GridField1D:
    L: float
    rho: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).copy()
        self.w = np.asarray(self.w, dtype=float).copy()
        if self.rho.shape != self.w.shape or self.rho.ndim != 1:
            raise ValueError("rho and w must be 1D arrays of equal length")
        if np.any(self.rho < 0):
            raise ValueError("density must be nonnegative")

    @property
    def M(self) -> int:
        return self.rho.size

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.dx

    @property
    def mass(self) -> float:
        return float(np.sum(self.rho) * self.dx)


@dataclass(frozen=True)
class HydroConfig:
    kernel: object
    T: float
    cfl: float = 0.4
    limiter: str = "none"
    record_dt: float | None = None
    window_inner: float | None = None
    window_outer: float | None = None

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.limiter not in ("none", "minmod"):
            raise ValueError(f"unknown limiter {self.limiter!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def offset(self, L: float) -> PeriodicOffset:
        radius = getattr(self.kernel, "radius", None)
        if radius is not None and radius >= L / 2:
            raise KernelTooWide(f"kernel radius {radius} must be < L/2 = {L / 2}")
        outer = self.window_outer if self.window_outer is not None else 0.45 * L
        inner = self.window_inner
        if inner is None:
            inner = min(getattr(self.kernel, "radius", 0.3 * L), outer)
        return PeriodicOffset(self.kernel, L, inner, outer)


class _Convolver:
    """Periodic midpoint-rule convolution with an odd stencil, via FFT."""

    def __init__(self, offset: PeriodicOffset, M: int):
        self.dx = offset.L / M
        g_hat = np.fft.rfft(offset.stencil(M))
        g_hat[0] = 0.0  # odd stencil: the exact sum is zero
        self.g_hat = g_hat
        self.M = M

    def __call__(self, rho):
        return np.fft.irfft(self.g_hat * np.fft.rfft(rho), n=self.M) * self.dx


_CONVOLVERS: dict = {}


def _convolver(offset: PeriodicOffset, M: int) -> _Convolver:
    key = (offset, M)
    conv = _CONVOLVERS.get(key)
    if conv is None:
        if len(_CONVOLVERS) > 32:
            _CONVOLVERS.clear()
        conv = _CONVOLVERS[key] = _Convolver(offset, M)
    return conv


def offset_field(field: GridField1D, offset: PeriodicOffset) -> np.ndarray:
    """(K' * rho)(x_i) = sum_j g(x_i - x_j) rho_j dx."""
    if not np.isclose(offset.L, field.L):
        raise DomainMismatch("offset was built for a different domain length")
    return _convolver(offset, field.M)(field.rho)


def compute_u(field: GridField1D, offset: PeriodicOffset) -> np.ndarray:
    return field.w - offset_field(field, offset)


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _velocity(rho, q, w_prev, u_prev):
    # vacuum cells carry w passively from the upwind neighbour
    w = np.empty_like(rho)
    massive = rho >= VACUUM
    w[massive] = q[massive] / rho[massive]
    if not np.all(massive):
        donor = np.where(u_prev > 0, np.roll(w_prev, 1), np.roll(w_prev, -1))
        w[~massive] = donor[~massive]
    return w


def _rhs(rho, q, w_prev, u_prev, conv, dx, limiter):
    w = _velocity(rho, q, w_prev, u_prev)
    u = w - conv(rho)
    a = 0.5 * (u + np.roll(u, -1))  # velocity at face i+1/2
    if limiter == "minmod":
        sr = _minmod(np.roll(rho, -1) - rho, rho - np.roll(rho, 1))
        sw = _minmod(np.roll(w, -1) - w, w - np.roll(w, 1))
        rl, wl = rho + 0.5 * sr, w + 0.5 * sw
        rr, wr = np.roll(rho - 0.5 * sr, -1), np.roll(w - 0.5 * sw, -1)
        ql, qr = rl * wl, rr * wr
    else:
        rl, rr = rho, np.roll(rho, -1)
        ql, qr = q, np.roll(q, -1)
    ap, am = np.maximum(a, 0.0), np.minimum(a, 0.0)
    f_rho = ap * rl + am * rr
    f_q = ap * ql + am * qr
    return -(f_rho - np.roll(f_rho, 1)) / dx, -(f_q - np.roll(f_q, 1)) / dx, w, u


def stable_dt(field: GridField1D, offset: PeriodicOffset, cfl: float = 0.4) -> float:
    u = compute_u(field, offset)
    return cfl * field.dx / max(float(np.max(np.abs(u))), EPS_SPEED)


def step(field: GridField1D, offset: PeriodicOffset, cfl: float = 0.4, dt: float | None = None,
         limiter: str = "none", u_prev: np.ndarray | None = None) -> GridField1D:
    """One SSP-RK2 step of the upwind scheme; dt defaults to the CFL step."""
    conv = _convolver(offset, field.M)
    dx = field.dx
    rho0, w0 = field.rho, field.w
    q0 = rho0 * w0
    if u_prev is None:
        u_prev = w0 - conv(rho0)
    dr, dq, w, u = _rhs(rho0, q0, w0, u_prev, conv, dx, limiter)
    h_cfl = cfl * dx / max(float(np.max(np.abs(u))), EPS_SPEED)
    h = h_cfl if dt is None else dt
    rho1, q1 = rho0 + h * dr, q0 + h * dq
    dr1, dq1, w1, u1 = _rhs(rho1, q1, w, u, conv, dx, limiter)
    rho2 = 0.5 * rho0 + 0.5 * (rho1 + h * dr1)
    q2 = 0.5 * q0 + 0.5 * (q1 + h * dq1)
    if not (np.all(np.isfinite(rho2)) and np.all(np.isfinite(q2))):
        raise NonFiniteState(f"non-finite hydro state at t = {field.t + h}")
    rho2 = np.maximum(rho2, 0.0)
    w2 = _velocity(rho2, q2, w1, u1)
    return GridField1D(field.L, rho2, w2, field.t + h)


@dataclass
class HydroSolution:
    L: float
    times: np.ndarray
    rho: np.ndarray  # (R, M)
    w: np.ndarray
    u: np.ndarray
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.rho.shape[1]

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.dx

    def field(self, k: int) -> GridField1D:
        return GridField1D(self.L, self.rho[k], self.w[k], float(self.times[k]))

    def record_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def _interp(self, arr, t, x):
        f = arr[self.record_index(t)]
        s = np.mod(np.asarray(x, dtype=float), self.L) / self.dx - 0.5
        i0 = np.floor(s).astype(int)
        frac = s - i0
        return f[np.mod(i0, self.M)] * (1.0 - frac) + f[np.mod(i0 + 1, self.M)] * frac

    def rho_at(self, t, x):
        return self._interp(self.rho, t, x)

    def u_at(self, t, x):
        return self._interp(self.u, t, x)

    def w_at(self, t, x):
        return self._interp(self.w, t, x)

    @cached_property
    def masses(self) -> np.ndarray:
        return self.rho.sum(axis=1) * self.dx


def solve(initial: GridField1D, cfg: HydroConfig, max_steps: int = 10_000_000) -> HydroSolution:
    """Step to ``cfg.T``, landing exactly on every multiple of ``record_dt``."""
    offset = cfg.offset(initial.L)
    record_dt = cfg.record_dt if cfg.record_dt is not None else cfg.T / 10
    n_rec = int(np.ceil(cfg.T / record_dt - 1e-9))
    targets = [initial.t + min(k * record_dt, cfg.T) for k in range(1, n_rec + 1)]

    fld = initial
    u = compute_u(fld, offset)
    times, rhos, ws, us = [fld.t], [fld.rho.copy()], [fld.w.copy()], [u]
    steps = 0
    for target in targets:
        while fld.t < target - 1e-14 * max(1.0, abs(target)):
            h = min(cfg.cfl * fld.dx / max(float(np.max(np.abs(u))), EPS_SPEED), target - fld.t)
            fld = step(fld, offset, dt=h, limiter=cfg.limiter, u_prev=u)
            u = compute_u(fld, offset)
            steps += 1
            if steps > max_steps:
                raise NonFiniteState("step budget exhausted; velocity field degenerated")
        fld.t = target
        times.append(target)
        rhos.append(fld.rho.copy())
        ws.append(fld.w.copy())
        us.append(u)
    return HydroSolution(initial.L, np.array(times), np.array(rhos), np.array(ws), np.array(us), steps,
                         {"cfl": cfg.cfl, "limiter": cfg.limiter, "window": [offset.inner, offset.outer]})


def smooth_initial_field(L: float, M: int, rho_amp: float = 0.5, w_amp: float = 0.3,
                         w_phase: float = 0.0, modes: int = 1) -> GridField1D:
    """Exact cell averages of rho = (1 + a sin(kx))/L and w = b sin(kx + phase)."""
    dx = L / M
    k = 2.0 * np.pi * modes / L
    xc = (np.arange(M) + 0.5) * dx
    damp = np.sin(k * dx / 2) / (k * dx / 2)
    rho = (1.0 + rho_amp * damp * np.sin(k * xc)) / L
    w = w_amp * damp * np.sin(k * xc + w_phase)
    return GridField1D(L, rho, w)


def restrict(values: np.ndarray) -> np.ndarray:
    """Average pairs of cells onto the grid with half the resolution."""
    return 0.5 * (values[0::2] + values[1::2])


def l1_difference(coarse: np.ndarray, fine: np.ndarray, L: float) -> float:
    return float(np.sum(np.abs(coarse - restrict(fine))) * L / coarse.size)


# -- diagnostics -------------------------------------------------------------

def _central_dx(f, dx):
    return (np.roll(f, -1) - np.roll(f, 1)) / (2 * dx)


def _psi_convolution(psi_stencil, f, dx):
    return np.fft.irfft(np.fft.rfft(psi_stencil) * np.fft.rfft(f), n=f.size) * dx


def _psi_stencil(psi, L, M):
    z = minimal_image(np.arange(M) * (L / M), L)
    vals = np.asarray(psi(z), dtype=float)
    vals[0] = 0.0  # multiplies a vanishing difference
    return vals


def _continuity_residual(sol: HydroSolution, e: np.ndarray) -> np.ndarray:
    """L1 norm of e_t + (u e)_x between consecutive records (midpoint in time)."""
    dx = sol.dx
    dt = np.diff(sol.times)
    e_mid = 0.5 * (e[1:] + e[:-1])
    u_mid = 0.5 * (sol.u[1:] + sol.u[:-1])
    res = (e[1:] - e[:-1]) / dt[:, None] + np.array([_central_dx(uu * ee, dx) for uu, ee in zip(u_mid, e_mid)])
    return np.sum(np.abs(res), axis=1) * dx


def e_monitor(sol: HydroSolution, psi=None) -> dict:
    """Track e = D_x w and the residual of e_t + (u e)_x = 0 between records.

    With a scalar weight ``psi`` (a callable on minimal-image offsets, psi = g')
    two nonlocal expressions are reported as well:

    * ``nonlocal_e``       D_x u + (psi * rho), identical to D_x w for smooth data;
    * ``difference_form_e`` D_x u + sum_y psi(x - y)(rho(x) - rho(y)) dy, which
      is not transported by u for this sign convention (see its residual).
    """
    dx = sol.dx
    e = np.array([_central_dx(w, dx) for w in sol.w])
    integral = e.sum(axis=1) * dx
    res = _continuity_residual(sol, e)
    out = {
        "t": sol.times,
        "integral_dxw": integral,
        "max_integral_drift": float(np.max(np.abs(integral - integral[0]))),
        "residual_l1": res,
        "max_residual_l1": float(np.max(res)) if res.size else 0.0,
    }
    if psi is not None:
        stencil = _psi_stencil(psi, sol.L, sol.M)
        total = np.sum(stencil) * dx
        ux = np.array([_central_dx(u, dx) for u in sol.u])
        conv = np.array([_psi_convolution(stencil, rho, dx) for rho in sol.rho])
        nonlocal_e = ux + conv
        diff_e = ux + sol.rho * total - conv
        out["nonlocal_e"] = nonlocal_e
        out["nonlocal_e_residual_l1"] = _continuity_residual(sol, nonlocal_e)
        out["nonlocal_e_gap"] = float(np.max(np.abs(nonlocal_e - e)))
        out["difference_form_e"] = diff_e
        out["difference_form_e_residual_l1"] = _continuity_residual(sol, diff_e)
        out["difference_form_e_integral"] = diff_e.sum(axis=1) * dx
    return out


# -- weak-form residuals --------------------------------------------------------

def _bump(s):
    return np.where(np.abs(s) < 1, (1 - s * s) ** 2, 0.0)


def _dbump(s):
    return np.where(np.abs(s) < 1, -4 * s * (1 - s * s), 0.0)


@dataclass(frozen=True)
class TensorBump:
    """eta(t, x, omega) = a(t) b(x) c(omega) with C^1 quartic bumps."""

    t_center: float
    t_width: float
    x_center: float
    x_width: float
    w_center: float
    w_width: float
    L: float

    def _t(self, t):
        s = (t - self.t_center) / self.t_width
        return _bump(s), _dbump(s) / self.t_width

    def _x(self, x):
        z = minimal_image(x - self.x_center, self.L)
        s = z / self.x_width
        return _bump(s), _dbump(s) / self.x_width

    def _w(self, w):
        return _bump((w - self.w_center) / self.w_width)

    def value(self, t, x, w):
        return self._t(t)[0] * self._x(x)[0] * self._w(w)

    def dt(self, t, x, w):
        return self._t(t)[1] * self._x(x)[0] * self._w(w)

    def dx(self, t, x, w):
        return self._t(t)[0] * self._x(x)[1] * self._w(w)


def bump_family(T: float, L: float, w_min: float, w_max: float) -> list:
    """The fixed 27-bump family: 3 centres per axis in t, x and omega.

    Time bumps have half-width T/2 centred at 0, T/4, T/2 (so all vanish at T);
    space bumps have half-width 0.3 L centred at L/4, L/2, 3L/4; omega bumps
    have half-width equal to the initial range of w, centred at its quartiles.
    """
    span = w_max - w_min if w_max > w_min else 1.0
    out = []
    for tc in (0.0, 0.25 * T, 0.5 * T):
        for xc in (0.25 * L, 0.5 * L, 0.75 * L):
            for wc in (w_min + 0.25 * span, w_min + 0.5 * span, w_min + 0.75 * span):
                out.append(TensorBump(tc, 0.5 * T, xc, 0.3 * L, wc, span, L))
    return out


def _trapezoid(values, times):
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def kinetic_residual(sol: HydroSolution, family=None, return_all: bool = False):
    """Weak-form residual of the monokinetic lift rho(t,x) delta(omega - w(t,x)).

    R[eta] = int eta_0 dmu_0 + int_0^T int (eta_t + (omega - K'*rho) eta_x) dmu_t dt,
    by midpoint rule in x and the trapezoid rule over the recorded times.
    """
    if family is None:
        family = bump_family(sol.times[-1] - sol.times[0], sol.L, float(sol.w[0].min()), float(sol.w[0].max()))
    x = sol.centers
    dx = sol.dx
    t = sol.times - sol.times[0]
    tt = t[:, None]
    vals = []
    for eta in family:
        if isinstance(eta, (int, float)) and eta == 0:
            vals.append(0.0)
            continue
        init = np.sum(eta.value(t[0], x, sol.w[0]) * sol.rho[0]) * dx
        integrand = np.sum((eta.dt(tt, x, sol.w) + sol.u * eta.dx(tt, x, sol.w)) * sol.rho, axis=1) * dx
        vals.append(float(init + _trapezoid(integrand, t)))
    vals = np.array(vals)
    worst = float(np.max(np.abs(vals))) if vals.size else 0.0
    return (worst, vals) if return_all else worst


def eam_residual(sol: HydroSolution, offset: PeriodicOffset) -> float:
    """Weak residual of the Euler-alignment momentum equation for (rho, u).

    Tested against the 9 (t, x) bumps of the kinetic family (omega factor
    dropped): int phi_0 rho_0 u_0 + int int (rho u phi_t + rho u^2 phi_x + rho A phi),
    A(x) = sum_y g'(x - y)(u(y) - u(x)) rho(y) dy.
    """
    t = sol.times - sol.times[0]
    T = t[-1]
    x, dx, L = sol.centers, sol.dx, sol.L
    stencil = _psi_stencil(offset.dg, L, sol.M)
    A = np.array([_psi_convolution(stencil, r * u, dx) - u * _psi_convolution(stencil, r, dx)
                  for r, u in zip(sol.rho, sol.u)])
    worst = 0.0
    for tc in (0.0, 0.25 * T, 0.5 * T):
        for xc in (0.25 * L, 0.5 * L, 0.75 * L):
            phi = TensorBump(tc, 0.5 * T, xc, 0.3 * L, 0.0, 1.0, L)
            init = np.sum(phi.value(0.0, x, 0.0) * sol.rho[0] * sol.u[0]) * dx
            integrand = np.array([
                np.sum(r * u * phi.dt(tk, x, 0.0) + r * u * u * phi.dx(tk, x, 0.0) + r * a * phi.value(tk, x, 0.0))
                * dx for tk, r, u, a in zip(t, sol.rho, sol.u, A)])
            worst = max(worst, abs(init + _trapezoid(integrand, t)))
    return float(worst)


def conservation_summary(sol: HydroSolution) -> dict:
    m = sol.masses
    w_max = sol.w.max(axis=1)
    w_min = sol.w.min(axis=1)
    return {
        "M": sol.M,
        "steps": sol.steps,
        "records": int(len(sol.times)),
        "t_final": float(sol.times[-1]),
        "relative_mass_drift": float(np.max(np.abs(m - m[0])) / abs(m[0])),
        "w_max_increase": float(max(np.max(np.diff(w_max)), 0.0)) if len(w_max) > 1 else 0.0,
        "w_min_decrease": float(max(np.max(-np.diff(w_min)), 0.0)) if len(w_min) > 1 else 0.0,
        "min_rho": float(sol.rho.min()),
        **sol.meta,
    }


def write_snapshots_csv(sol: HydroSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cell_center", "rho", "w", "u"])
        for k, t in enumerate(sol.times):
            for xc, r, w, u in zip(sol.centers, sol.rho[k], sol.w[k], sol.u[k]):
                writer.writerow([repr(float(t)), repr(float(xc)), repr(float(r)), repr(float(w)), repr(float(u))])


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
