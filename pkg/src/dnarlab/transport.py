"""Discrete measures and exact optimal-transport distances.

Distances
---------
w2, w1         exact OT with |x-y|^2 / |x-y| ground cost (optionally truncated)
dbl            bounded-Lipschitz distance, via truncated-cost W1 or a direct LP
fibered_w2     per-fibre W2 aggregated over a common omega-marginal
adapted_w2     outer OT over fibres with cost W2^2(inner) + |omega - omega'|^2

Equal-size uniform problems are solved as assignment problems; everything else
goes to a network simplex (POT). In one dimension W1 has a closed form through
cumulative distribution functions, on the line and on the circle, which is used
whenever the cost truncation cannot bind.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, FormatError, MarginalMismatch, NonNormalizable

WEIGHT_TOL = 1e-12
FIBER_TOL = 1e-10


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0] or pts.shape[0] == 0:
            raise ValueError("points and weights must be non-empty and of equal length")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points, self.weights = pts, w

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def from_masses(cls, points, masses) -> "DiscreteMeasure":
        """Normalize nonnegative masses, dropping empty atoms."""
        m = np.asarray(masses, dtype=float)
        total = m.sum()
        if not total > 0:
            raise NonNormalizable("total mass must be positive")
        keep = m > 0
        pts = np.asarray(points, dtype=float)
        return cls(pts[keep], m[keep] / total)

    def merged(self) -> "DiscreteMeasure":
        """Same measure with coincident atoms merged (weights summed)."""
        pts, inv = np.unique(self.points, axis=0, return_inverse=True)
        if pts.shape[0] == self.size:
            return self
        w = np.bincount(inv.reshape(-1), weights=self.weights, minlength=pts.shape[0])
        return DiscreteMeasure(pts, w / w.sum())

    def integrate(self, f) -> np.ndarray:
        vals = np.asarray(f(self.points))
        return np.tensordot(self.weights, vals, axes=(0, 0))


@dataclass
class Fiber:
    omega: np.ndarray
    mass: float
    conditional: DiscreteMeasure


@dataclass
class FiberedMeasure:
    """Disintegration of a phase-space measure along its omega-marginal."""

    fibers: list

    def __post_init__(self):
        if not self.fibers:
            raise ValueError("a fibered measure needs at least one fibre")
        self.fibers = [Fiber(np.atleast_1d(np.asarray(f.omega, dtype=float)), float(f.mass), f.conditional)
                       for f in self.fibers]
        masses = np.array([f.mass for f in self.fibers])
        if np.any(masses <= 0) or abs(masses.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("fibre masses must be positive and sum to 1")
        om = self.omegas
        if np.unique(om, axis=0).shape[0] != om.shape[0]:
            raise ValueError("fibre omegas must be distinct")

    @property
    def omegas(self) -> np.ndarray:
        return np.array([f.omega for f in self.fibers])

    @property
    def masses(self) -> np.ndarray:
        return np.array([f.mass for f in self.fibers])

    @property
    def dim(self) -> int:
        return self.fibers[0].conditional.dim

    def flatten(self) -> DiscreteMeasure:
        """The underlying measure on (x, omega) space."""
        pts, wts = [], []
        for f in self.fibers:
            c = f.conditional
            pts.append(np.hstack([c.points, np.broadcast_to(f.omega, (c.size, f.omega.size))]))
            wts.append(f.mass * c.weights)
        w = np.concatenate(wts)
        return DiscreteMeasure(np.vstack(pts), w / w.sum())

    @classmethod
    def from_atoms(cls, x, omega, weights=None) -> "FiberedMeasure":
        """Group atoms (x_i, omega_i) by equal omega into fibres."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        omega = np.asarray(omega, dtype=float).reshape(x.shape[0], -1)
        n = x.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        keys, inv = np.unique(omega, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        fibers = []
        for k in range(keys.shape[0]):
            sel = inv == k
            mass = w[sel].sum()
            fibers.append(Fiber(keys[k], mass, DiscreteMeasure(x[sel], w[sel] / mass)))
        total = sum(f.mass for f in fibers)
        for f in fibers:
            f.mass /= total
        return cls(fibers)


@dataclass
class Coupling:
    """Optimal plan between two merged supports, with an optimality certificate."""

    source: np.ndarray
    target: np.ndarray
    plan: np.ndarray
    cost: float
    marginal_error: float
    dual_gap: float | None = None
    method: str = ""
    extra: dict = field(default_factory=dict)


def _check_dims(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"dimension {mu.dim} != {nu.dim}")


def _is_uniform(w: np.ndarray) -> bool:
    return np.all(w == w[0])


def _emd(a, b, C):
    os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")
    import ot

    G, log = ot.emd(a, b, C, numItermax=10_000_000, log=True)
    return G, log["u"], log["v"]


def _certificate(a, b, C, cost):
    """Duality gap plus worst reduced-cost violation, from network simplex potentials."""
    _, u, v = _emd(a, b, C)
    gap = max(cost - float(a @ u + b @ v), 0.0)
    return max(gap, float(np.max(u[:, None] + v[None, :] - C)))


def solve_ot(a: np.ndarray, b: np.ndarray, C: np.ndarray, certify: bool = False) -> Coupling:
    """Exact discrete OT between weight vectors ``a`` and ``b`` with cost ``C``.

    Uniform square problems go to the assignment solver, which has no dual
    output; ``certify=True`` then also computes potentials so that the
    returned coupling carries a duality gap.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = C.shape
    if n == m and _is_uniform(a) and _is_uniform(b) and a[0] == b[0]:
        # a vertex of the Birkhoff polytope is optimal: an assignment problem
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros_like(C)
        plan[rows, cols] = a[0]
        cost = float(C[rows, cols].sum() / n)
        gap = _certificate(a, b, C, cost) if certify else None
        method = "assignment"
    else:
        plan, u, v = _emd(a, b, C)
        cost = float(np.sum(plan * C))
        gap = max(cost - float(a @ u + b @ v), 0.0)
        # a reduced-cost violation shows up as a positive slack
        gap = max(gap, float(np.max(u[:, None] + v[None, :] - C)))
        method = "network_simplex"
    err = max(float(np.max(np.abs(plan.sum(1) - a))), float(np.max(np.abs(plan.sum(0) - b))))
    return Coupling(np.arange(n), np.arange(m), plan, cost, err, gap, method)


def torus_cdist(p: np.ndarray, q: np.ndarray, period: float) -> np.ndarray:
    diff = p[:, None, :] - q[None, :, :]
    diff -= period * np.round(diff / period)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _distance_matrix(p, q, period=None):
    if period is None:
        return cdist(p, q)
    return torus_cdist(p, q, period)


def optimal_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, power: int = 2,
                     cost_cap: float | None = None, period: float | None = None,
                     certify: bool = False) -> Coupling:
    _check_dims(mu, nu)
    mu, nu = mu.merged(), nu.merged()
    D = _distance_matrix(mu.points, nu.points, period)
    if cost_cap is not None:
        D = np.minimum(D, cost_cap)
    C = D**2 if power == 2 else D
    out = solve_ot(mu.weights, nu.weights, C, certify)
    out.source, out.target = mu.points, nu.points
    return out


def w2_squared(mu: DiscreteMeasure, nu: DiscreteMeasure, period: float | None = None) -> float:
    return max(optimal_coupling(mu, nu, 2, period=period).cost, 0.0)


def w2(mu: DiscreteMeasure, nu: DiscreteMeasure, period: float | None = None) -> float:
    """Exact quadratic Wasserstein distance (square root of the optimal cost)."""
    return float(np.sqrt(w2_squared(mu, nu, period)))


def _cdf_gaps(mu: DiscreteMeasure, nu: DiscreteMeasure):
    pts = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    wts = np.concatenate([mu.weights, -nu.weights])
    order = np.argsort(pts, kind="stable")
    pts, wts = pts[order], wts[order]
    return pts, np.cumsum(wts)


def w1_line(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """W1 on the real line: integral of |F_mu - F_nu|."""
    pts, D = _cdf_gaps(mu, nu)
    return float(np.sum(np.abs(D[:-1]) * np.diff(pts)))


def w1_circle(mu: DiscreteMeasure, nu: DiscreteMeasure, period: float) -> float:
    """W1 on the circle of length ``period``: min_c integral of |F_mu - F_nu - c|.

    The minimizing shift is a weighted median of the CDF gap.
    """
    mu = DiscreteMeasure(np.mod(mu.points, period), mu.weights)
    nu = DiscreteMeasure(np.mod(nu.points, period), nu.weights)
    pts, D = _cdf_gaps(mu, nu)
    lengths = np.append(np.diff(pts), period - pts[-1] + pts[0])
    D = D.copy()
    D[-1] = 0.0  # total masses agree
    order = np.argsort(D, kind="stable")
    cum = np.cumsum(lengths[order])
    c = D[order][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(lengths * np.abs(D - c)))


def w1(mu: DiscreteMeasure, nu: DiscreteMeasure, cost_cap: float | None = None,
       period: float | None = None) -> float:
    """Exact W1 with cost min(|x-y|, cost_cap) (no truncation when cap is None)."""
    _check_dims(mu, nu)
    if mu.dim == 1:
        if period is not None and (cost_cap is None or cost_cap >= period / 2):
            return w1_circle(mu, nu, period)
        if period is None:
            lo = min(mu.points.min(), nu.points.min())
            hi = max(mu.points.max(), nu.points.max())
            if cost_cap is None or cost_cap >= hi - lo:
                return w1_line(mu, nu)
    return max(optimal_coupling(mu, nu, 1, cost_cap, period).cost, 0.0)


def dbl_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, period: float | None = None) -> float:
    """Bounded-Lipschitz distance by the direct dual LP on the union support."""
    _check_dims(mu, nu)
    pts = np.vstack([mu.points, nu.points])
    diff = np.concatenate([mu.weights, -nu.weights])
    pts, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    c = np.bincount(inv, weights=diff, minlength=pts.shape[0])
    n = pts.shape[0]
    if n == 1:
        return 0.0
    D = _distance_matrix(pts, pts, period)
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    A = np.zeros((i.size, n))
    A[np.arange(i.size), i] = 1.0
    A[np.arange(i.size), j] = -1.0
    res = linprog(-c, A_ub=A, b_ub=D[i, j], bounds=[(-1.0, 1.0)] * n, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(max(-res.fun, 0.0))


def dbl(mu: DiscreteMeasure, nu: DiscreteMeasure, method: str = "ot", period: float | None = None) -> float:
    """Bounded-Lipschitz distance.

    For probability measures the dual set {|phi| <= 1, Lip <= 1} coincides,
    up to an additive constant that the objective ignores, with the 1-Lipschitz
    functions for the metric min(|x-y|, 2); hence dbl = W1 with cost capped at 2.
    """
    if method == "lp":
        return dbl_lp(mu, nu, period)
    if method != "ot":
        raise ValueError(f"unknown method {method!r}")
    return min(w1(mu, nu, cost_cap=2.0, period=period), 2.0)


def _match_fibers(A: FiberedMeasure, B: FiberedMeasure):
    if A.dim != B.dim or A.omegas.shape[1] != B.omegas.shape[1]:
        raise DimensionMismatch("fibered measures live in different dimensions")
    if len(A.fibers) != len(B.fibers):
        raise MarginalMismatch("omega-marginals have different numbers of atoms")
    om_b = B.omegas
    pairs = []
    used = set()
    for fa in A.fibers:
        d = np.max(np.abs(om_b - fa.omega), axis=1)
        k = int(np.argmin(d))
        fb = B.fibers[k]
        if d[k] > FIBER_TOL or abs(fb.mass - fa.mass) > FIBER_TOL or k in used:
            raise MarginalMismatch("omega-marginals differ; mass cannot move between fibres")
        used.add(k)
        pairs.append((fa, fb))
    return pairs


def fibered_w2(A: FiberedMeasure, B: FiberedMeasure) -> float:
    pairs = _match_fibers(A, B)
    total = sum(fa.mass * w2_squared(fa.conditional, fb.conditional) for fa, fb in pairs)
    return float(np.sqrt(total))


def adapted_w2(A: FiberedMeasure, B: FiberedMeasure, return_coupling: bool = False):
    if A.dim != B.dim:
        raise DimensionMismatch("fibered measures live in different dimensions")
    C = np.array([[w2_squared(fa.conditional, fb.conditional) + float(np.sum((fa.omega - fb.omega) ** 2))
                   for fb in B.fibers] for fa in A.fibers])
    out = solve_ot(A.masses, B.masses, C, certify=return_coupling)
    val = float(np.sqrt(max(out.cost, 0.0)))
    return (val, out) if return_coupling else val


def empirical_from_ensemble(ens, mode: str = "position", velocity: str = "omega"):
    """Uniform empirical measure of a particle ensemble.

    ``position`` gives the x-marginal, ``phase`` the atoms (x_i, omega_i) (or
    (x_i, v_i) with ``velocity="v"``), ``fibered`` groups equal omega values.
    """
    vel = ens.omega if velocity == "omega" else ens.v
    if mode == "position":
        return DiscreteMeasure.uniform(ens.x)
    if mode == "phase":
        return DiscreteMeasure.uniform(np.hstack([ens.x, vel]))
    if mode == "fibered":
        return FiberedMeasure.from_atoms(ens.x, vel)
    raise ValueError(f"unknown mode {mode!r}")


def pushforward(mu: DiscreteMeasure, f) -> DiscreteMeasure:
    pts = np.asarray(f(mu.points), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return DiscreteMeasure(pts, mu.weights).merged()


def marginal(mu: DiscreteMeasure, coords) -> DiscreteMeasure:
    coords = list(coords)
    return pushforward(mu, lambda p: p[:, coords])


@dataclass
class Moments:
    rho: DiscreteMeasure
    momentum: np.ndarray  # rho*w per atom of rho
    pressure: np.ndarray  # sum mass (omega - wbar) (x) omega per atom

    @property
    def mean_velocity(self) -> np.ndarray:
        return self.momentum / self.rho.weights[:, None]


def moments(mu: FiberedMeasure) -> Moments:
    """Density, momentum and pressure tensor of a fibered atomic measure."""
    xs, oms, ms = [], [], []
    for f in mu.fibers:
        c = f.conditional
        xs.append(c.points)
        oms.append(np.broadcast_to(f.omega, (c.size, f.omega.size)))
        ms.append(f.mass * c.weights)
    x, om, m = np.vstack(xs), np.vstack(oms), np.concatenate(ms)
    locs, inv = np.unique(x, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    k = locs.shape[0]
    rho = np.bincount(inv, weights=m, minlength=k)
    mom = np.stack([np.bincount(inv, weights=m * om[:, a], minlength=k) for a in range(om.shape[1])], axis=1)
    wbar = mom / rho[:, None]
    dev = om - wbar[inv]
    P = np.zeros((k, om.shape[1], om.shape[1]))
    np.add.at(P, inv, m[:, None, None] * dev[:, :, None] * om[:, None, :])
    return Moments(DiscreteMeasure(locs, rho / rho.sum()), mom, P)


def grid_to_measure(field) -> DiscreteMeasure:
    """One atom per cell centre carrying the cell mass rho*dx (normalized)."""
    return DiscreteMeasure.from_masses(np.asarray(field.centers)[:, None], np.asarray(field.rho) * field.dx)


def coarsened_grid_measure(field, max_atoms: int = 4096):
    """Grid measure with groups of adjacent cells merged at their centre of mass.

    Returns the measure and the moved-mass radius bounding the change in dbl.
    """
    mu = grid_to_measure(field)
    M = len(field.rho)
    if M <= max_atoms:
        return mu, 0.0
    group = int(np.ceil(M / max_atoms))
    masses = np.asarray(field.rho) * field.dx
    centers = np.asarray(field.centers)
    pts, wts = [], []
    for s in range(0, M, group):
        m = masses[s:s + group]
        if m.sum() > 0:
            pts.append(np.sum(m * centers[s:s + group]) / m.sum())
            wts.append(m.sum())
    return DiscreteMeasure.from_masses(np.array(pts)[:, None], np.array(wts)), group * field.dx


# -- serialization -----------------------------------------------------------

def write_measure_csv(mu: DiscreteMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weight"] + [f"p{k}" for k in range(mu.dim)])
        for w, p in zip(mu.weights, mu.points):
            writer.writerow([repr(float(w))] + [repr(float(c)) for c in p])


def measure_to_json(mu) -> dict:
    if isinstance(mu, FiberedMeasure):
        return {
            "kind": "fibered",
            "dimension": mu.dim,
            "omega_dimension": int(mu.omegas.shape[1]),
            "fibers": [{"omega": f.omega.tolist(), "mass": f.mass,
                        "weights": f.conditional.weights.tolist(),
                        "points": f.conditional.points.tolist()} for f in mu.fibers],
        }
    return {"kind": "discrete", "dimension": mu.dim, "weights": mu.weights.tolist(),
            "points": mu.points.tolist()}


def write_measure_json(mu, path) -> None:
    with open(path, "w") as fh:
        json.dump(measure_to_json(mu), fh, indent=2)


def _renormalize(w):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise FormatError("weights must be positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise FormatError(f"weights sum to {w.sum()}, expected 1")
    return w / w.sum()


def measure_from_json(obj: dict):
    try:
        if obj["kind"] == "discrete":
            return DiscreteMeasure(np.asarray(obj["points"], dtype=float).reshape(len(obj["weights"]), -1),
                                   _renormalize(obj["weights"]))
        if obj["kind"] == "fibered":
            fibers = []
            for f in obj["fibers"]:
                pts = np.asarray(f["points"], dtype=float).reshape(len(f["weights"]), -1)
                fibers.append(Fiber(np.asarray(f["omega"], dtype=float), float(f["mass"]),
                                    DiscreteMeasure(pts, _renormalize(f["weights"]))))
            masses = _renormalize([f.mass for f in fibers])
            for f, m in zip(fibers, masses):
                f.mass = float(m)
            return FiberedMeasure(fibers)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed measure JSON: {exc}") from exc
    raise FormatError(f"unknown measure kind {obj.get('kind')!r}")


def load_measure(path):
    """Read a measure from CSV (``weight,p0..``) or the JSON container."""
    path = str(path)
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                return measure_from_json(json.load(fh))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows or not rows[0] or rows[0][0] != "weight":
        raise FormatError(f"{path}: expected header 'weight,p0,...'")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(rows[0]):
        raise FormatError(f"{path}: ragged or empty table")
    try:
        return DiscreteMeasure(data[:, 1:], _renormalize(data[:, 0]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
