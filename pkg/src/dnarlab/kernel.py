"""Interaction potentials K, their gradients, Hessians and matrix weights.

Every spec evaluates on arrays of shape ``(..., d)``:

* ``K(x)``    -> ``(...)``
* ``grad(x)`` -> ``(..., d)``
* ``hess(x)`` -> ``(..., d, d)``

Gradients vanish at the origin for all built-in potentials, so the j = i
self term in a first-order particle sum contributes nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import SingularEvaluation

FD_STEP = 1e-5


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def bump_profile(r, radius: float) -> np.ndarray:
    """q(r) = (1 - (r/R)^2)^2 inside the ball, 0 outside (C^1 at r = R)."""
    r = np.asarray(r, dtype=float)
    s = 1.0 - (r / radius) ** 2
    return np.where(r <= radius, s * s, 0.0)


def bump_profile_derivative(r, radius: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    s = 1.0 - (r / radius) ** 2
    return np.where(r <= radius, -4.0 * r / radius**2 * s, 0.0)


@dataclass(frozen=True)
class Quadratic:
    """K(x) = (lam/2)|x|^2; lam-convex with constant Hessian lam*I."""

    lam: float
    dim: int = 1
    kind: str = field(default="quadratic", init=False, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def K(self, x):
        x = _as_points(x, self.dim)
        return 0.5 * self.lam * np.sum(x * x, axis=-1)

    def grad(self, x):
        return self.lam * _as_points(x, self.dim)

    def radial(self, r):
        """(K'(r), K''(r)) along a ray, for r >= 0."""
        r = np.asarray(r, dtype=float)
        return self.lam * r, np.full_like(r, self.lam)

    def hess(self, x):
        x = _as_points(x, self.dim)
        return np.broadcast_to(self.lam * np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()


@dataclass(frozen=True)
class WeaklySingular:
    """K(x) = |x|^(2-alpha) / ((2-alpha)(1-alpha)) with alpha in (0, 1).

    The Hessian behaves like |x|^-alpha and cannot be evaluated at 0.
    """

    alpha: float
    dim: int = 1
    kind: str = field(default="weakly_singular", init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def K(self, x):
        a = self.alpha
        r = _norm(_as_points(x, self.dim))
        return r ** (2.0 - a) / ((2.0 - a) * (1.0 - a))

    def grad(self, x):
        x = _as_points(x, self.dim)
        r = _norm(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (-self.alpha), 0.0) / (1.0 - self.alpha)
        return scale[..., None] * x

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            ra = r ** (-self.alpha)
        return r * np.where(r > 0, ra, 0.0) / (1.0 - self.alpha), ra

    def hess(self, x):
        x = _as_points(x, self.dim)
        r = _norm(x)
        if np.any(r == 0):
            raise SingularEvaluation("weakly singular Hessian evaluated at x = 0")
        a = self.alpha
        eye = np.eye(self.dim)
        outer = x[..., :, None] * x[..., None, :]
        ra = r ** (-a)
        return (ra[..., None, None] * eye - (a * ra / r**2)[..., None, None] * outer) / (1.0 - a)


@dataclass(frozen=True)
class SmoothCompact:
    """Radial potential whose profile satisfies K''(r) = a q(r).

    Built by integrating the bump profile twice along rays, so the radial
    derivative is ``a Q(r)`` with ``Q(r) = int_0^r q``. In one dimension the
    Hessian is exactly ``a q(|x|)`` and vanishes outside the ball of radius R;
    for d >= 2 the tangential part ``a Q(r)/r`` does not vanish outside the ball.
    """

    radius: float
    amplitude: float = 1.0
    dim: int = 1
    kind: str = field(default="smooth_compact", init=False, repr=False)

    def __post_init__(self):
        if not (self.radius > 0 and self.amplitude > 0):
            raise ValueError("radius and amplitude must be positive")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def _Q_over_r(self, r):
        # Q(r)/r as a polynomial inside the ball, so r = 0 needs no special case
        R = self.radius
        inside = 1.0 - 2.0 * r**2 / (3.0 * R**2) + r**4 / (5.0 * R**4)
        with np.errstate(divide="ignore"):
            outside = (8.0 * R / 15.0) / np.where(r > 0, r, 1.0)
        return np.where(r <= R, inside, outside)

    def radial(self, r):
        # clipping at R reproduces the constant tail Q(R) = 8R/15 and q(R) = 0
        R, a = self.radius, self.amplitude
        s = np.minimum(np.asarray(r, dtype=float), R)
        s2 = (s / R) ** 2
        return a * s * (1.0 - s2 * (2.0 / 3.0 - s2 / 5.0)), a * (1.0 - s2) ** 2

    def K(self, x):
        R, a = self.radius, self.amplitude
        r = _norm(_as_points(x, self.dim))
        inside = r**2 / 2.0 - r**4 / (6.0 * R**2) + r**6 / (30.0 * R**4)
        outside = 11.0 * R**2 / 30.0 + 8.0 * R / 15.0 * (r - R)
        return a * np.where(r <= R, inside, outside)

    def grad(self, x):
        x = _as_points(x, self.dim)
        return (self.amplitude * self._Q_over_r(_norm(x)))[..., None] * x

    def hess(self, x):
        x = _as_points(x, self.dim)
        r = _norm(x)
        a = self.amplitude
        qr = self._Q_over_r(r)
        q = bump_profile(r, self.radius)
        with np.errstate(divide="ignore", invalid="ignore"):
            xhat = np.where(r[..., None] > 0, x / np.where(r > 0, r, 1.0)[..., None], 0.0)
        outer = xhat[..., :, None] * xhat[..., None, :]
        eye = np.eye(self.dim)
        # at r = 0 both q and Q/r equal 1 so the split is irrelevant there
        return a * (q[..., None, None] * outer + qr[..., None, None] * (eye - outer))


KernelSpec = Union[Quadratic, WeaklySingular, SmoothCompact]


@dataclass(frozen=True)
class FromKernel:
    """Matrix weight Psi = Hess K."""

    kernel: KernelSpec
    kind: str = field(default="from_kernel", init=False, repr=False)

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def psi(self, x):
        return self.kernel.hess(x)


@dataclass(frozen=True)
class ScalarBump:
    """Psi(x) = a q(|x|) I, a C^1 weight supported in the ball of radius R."""

    radius: float
    amplitude: float = 1.0
    dim: int = 1
    kind: str = field(default="scalar_bump", init=False, repr=False)

    def __post_init__(self):
        if not (self.radius > 0 and self.amplitude > 0):
            raise ValueError("radius and amplitude must be positive")

    def psi(self, x):
        x = _as_points(x, self.dim)
        q = self.amplitude * bump_profile(_norm(x), self.radius)
        return q[..., None, None] * np.eye(self.dim)


MatrixWeightSpec = Union[FromKernel, ScalarBump]


def eval_K(spec: KernelSpec, x) -> float | np.ndarray:
    out = spec.K(x)
    return float(out) if np.ndim(out) == 0 else out


def eval_gradK(spec: KernelSpec, x) -> np.ndarray:
    return spec.grad(x)


def eval_Psi(spec, x) -> np.ndarray:
    """Evaluate a matrix weight; a bare potential is treated as FromKernel."""
    if hasattr(spec, "psi"):
        return spec.psi(x)
    return spec.hess(x)


def weight_function(psi):
    """Return a callable diffs -> (..., d, d) for a weight, potential or callable."""
    if hasattr(psi, "psi"):
        return psi.psi
    if hasattr(psi, "hess"):
        return psi.hess
    if callable(psi):
        return psi
    raise TypeError(f"cannot use {psi!r} as a communication weight")


def kernel_from_dict(block: dict):
    """Build a potential or weight from a config block (``type`` plus parameters)."""
    kind = block["type"]
    dim = int(block.get("dim", 1))
    if kind == "quadratic":
        return Quadratic(float(block.get("lambda", 1.0)), dim)
    if kind == "weakly_singular":
        return WeaklySingular(float(block.get("alpha", 0.5)), dim)
    if kind == "smooth_compact":
        return SmoothCompact(float(block.get("radius", 1.0)), float(block.get("amplitude", 1.0)), dim)
    if kind == "scalar_bump":
        return ScalarBump(float(block.get("radius", 1.0)), float(block.get("amplitude", 1.0)), dim)
    raise ValueError(f"unknown kernel type {kind!r}")


@dataclass
class ValidationReport:
    kind: str
    dim: int
    samples: int
    symmetry_error: float
    psi_symmetry_error: float
    min_eigenvalue: float
    grad_fd_error: float | None
    hess_fd_error: float | None
    psd_tol: float = 1e-12
    fd_tol: float = 1e-5

    @property
    def passed(self) -> bool:
        ok = self.symmetry_error == 0.0 and self.psi_symmetry_error == 0.0
        ok = ok and self.min_eigenvalue >= -self.psd_tol
        for err in (self.grad_fd_error, self.hess_fd_error):
            if err is not None:
                ok = ok and err <= self.fd_tol
        return ok

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "kind", "dim", "samples", "symmetry_error", "psi_symmetry_error", "min_eigenvalue",
            "grad_fd_error", "hess_fd_error", "psd_tol", "fd_tol")}
        out["passed"] = self.passed
        return out


def _sample_points(spec, samples: int, rng: np.random.Generator) -> np.ndarray:
    d = spec.dim
    base = spec.kernel if isinstance(spec, FromKernel) else spec
    radius = getattr(base, "radius", None)
    scale = 1.5 * radius if radius is not None else 2.0
    if isinstance(base, WeaklySingular):
        # keep clear of the origin where the Hessian blows up
        u = rng.standard_normal((samples, d))
        u /= _norm(u)[:, None]
        return u * rng.uniform(0.1, scale, size=(samples, 1))
    return rng.uniform(-scale, scale, size=(samples, d))


def _rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    # error relative to max(|exact|, 1) per sample
    axes = tuple(range(1, exact.ndim))
    num = np.max(np.abs(approx - exact), axis=axes)
    den = np.maximum(np.max(np.abs(exact), axis=axes), 1.0)
    return float(np.max(num / den))


def check_kernel(spec, samples: int = 1000, seed: int = 0, h: float = FD_STEP) -> ValidationReport:
    """Sample symmetry, positive semi-definiteness and finite-difference consistency."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = _sample_points(spec, samples, rng)
    d = spec.dim
    potential = spec.kernel if isinstance(spec, FromKernel) else (spec if hasattr(spec, "K") else None)
    weight = weight_function(spec)

    sym = 0.0
    if potential is not None:
        sym = float(np.max(np.abs(potential.K(x) - potential.K(-x))))
    P = weight(x)
    psi_sym = float(np.max(np.abs(P - weight(-x))))
    eig = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2)))
    min_eig = float(np.min(eig))

    grad_err = hess_err = None
    if potential is not None:
        eye = np.eye(d)
        fd_grad = np.stack(
            [(potential.K(x + h * eye[k]) - potential.K(x - h * eye[k])) / (2 * h) for k in range(d)], axis=-1)
        grad_err = _rel_err(fd_grad, potential.grad(x))
        fd_hess = np.stack(
            [(potential.grad(x + h * eye[k]) - potential.grad(x - h * eye[k])) / (2 * h) for k in range(d)],
            axis=-1)
        hess_err = _rel_err(fd_hess, potential.hess(x))

    return ValidationReport(
        kind=spec.kind, dim=d, samples=samples, symmetry_error=sym, psi_symmetry_error=psi_sym,
        min_eigenvalue=min_eig, grad_fd_error=grad_err, hess_fd_error=hess_err)
