"""Command-line front end: ``dnar-lab <mode> --config <path> [--out DIR] [--seed S] [--workers N]``.

Configs are JSON documents validated by pydantic before anything runs. Every
run writes ``effective_config.json`` (all defaults filled in) and
``manifest.json`` (sha256 of every emitted file) into the output directory.

Exit status: 0 on success, 1 on numerical failure, 2 on configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .errors import ConfigurationError, DnarError, NumericalError, SchemaError, VersionError
from .hydro1d import (GridField1D, HydroConfig, conservation_summary, e_monitor, eam_residual,
                      kinetic_residual, smooth_initial_field, solve, write_snapshots_csv)
from .kernel import FromKernel, check_kernel, kernel_from_dict
from .meanfield import (contractivity_study, jsonable, convergence_in_N, equilibrium_study, run_seed_stream,
                        twin_ensembles)
from .particle import (IntegratorConfig, ParticleEnsemble, dnar_velocity, equivalence_check, integrate_cs,
                       integrate_dnar, sample_ensemble, trajectory_summary, write_trajectory_csv)
from .transport import FiberedMeasure, adapted_w2, dbl, load_measure, optimal_coupling, w1, w2

SCHEMA_VERSION = 1
MODES = ("particles-dnar", "particles-cs", "hydro", "metrics", "study-cc", "study-contractivity",
         "study-equilibrium", "study-equivalence", "kernel-check")


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class KernelBlock(_Block):
    type: Literal["quadratic", "weakly_singular", "smooth_compact", "scalar_bump"] = "quadratic"
    lam: float = Field(1.0, gt=0, alias="lambda")
    alpha: float = Field(0.5, gt=0, lt=1)
    radius: float = Field(0.2, gt=0)
    amplitude: float = Field(1.0, gt=0)
    dim: int = Field(1, ge=1)

    def build(self):
        return kernel_from_dict({"type": self.type, "lambda": self.lam, "alpha": self.alpha,
                                 "radius": self.radius, "amplitude": self.amplitude, "dim": self.dim})


class ParticlesBlock(_Block):
    N: int = Field(16, ge=1)
    positions: Literal["gaussian", "uniform", "lattice"] = "gaussian"
    scale: float = Field(1.0, gt=0)
    omega_scale: float = Field(0.5, ge=0)
    period: Optional[float] = Field(None, gt=0)
    initial_velocity: Literal["consistent", "omega", "zero"] = "consistent"


class IntegratorBlock(_Block):
    dt: float = Field(1e-3, gt=0)
    T: float = Field(1.0, gt=0)
    scheme: Literal["rk4", "euler"] = "rk4"
    record_every: int = Field(10, ge=1)


class HydroBlock(_Block):
    L: float = Field(1.0, gt=0)
    M: int = Field(256, ge=8)
    T: float = Field(1.0, gt=0)
    cfl: float = Field(0.4, gt=0, le=1)
    limiter: Literal["none", "minmod"] = "none"
    record_dt: Optional[float] = Field(None, gt=0)
    initial: Literal["smooth", "uniform"] = "smooth"
    rho_amp: float = Field(0.3, ge=0, lt=1)
    w_amp: float = 0.05
    uniform_w: float = 0.0
    window_inner: Optional[float] = Field(None, gt=0)
    window_outer: Optional[float] = Field(None, gt=0)
    diagnostics: bool = True


class StudyBlock(_Block):
    N_list: List[int] = Field(default_factory=lambda: [50, 100, 200, 400, 800])
    seeds: int = Field(8, ge=1)
    reference_M: int = Field(4096, ge=8)
    dt: float = Field(1e-2, gt=0)
    T: float = Field(1.0, gt=0)
    slope_threshold: float = -0.5
    N: int = Field(32, ge=1)
    spread: float = Field(1.0, gt=0)
    omega_scale: float = Field(0.5, ge=0)
    max_samples: int = Field(400, ge=2)

    @model_validator(mode="after")
    def _grid(self):
        if len(self.N_list) < 3 or any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("N_list must be increasing with at least 3 entries")
        if min(self.N_list) < 1:
            raise ValueError("N_list entries must be >= 1")
        return self


class KernelCheckBlock(_Block):
    samples: int = Field(1000, ge=1)
    h: float = Field(1e-5, gt=0)


class RunConfig(_Block):
    schema_version: int = SCHEMA_VERSION
    mode: Optional[Literal[MODES]] = None  # type: ignore[valid-type]
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "dnar-out"
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    weight: Optional[KernelBlock] = None
    particles: ParticlesBlock = Field(default_factory=ParticlesBlock)
    integrator: IntegratorBlock = Field(default_factory=IntegratorBlock)
    hydro: HydroBlock = Field(default_factory=HydroBlock)
    study: StudyBlock = Field(default_factory=StudyBlock)
    kernel_check: KernelCheckBlock = Field(default_factory=KernelCheckBlock)


def _schema_error(exc: ValidationError) -> SchemaError:
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err["loc"])
    if err["type"] == "extra_forbidden":
        return SchemaError(path, f"unknown key {str(err['loc'][-1])!r}")
    return SchemaError(path, err["msg"])


def parse_config(text: str, mode: str | None = None) -> RunConfig:
    """Validate a JSON config; ``mode`` from the command line fills or must match ``mode``."""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("", "config must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise VersionError(f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise _schema_error(exc) from None
    if mode is not None:
        if cfg.mode is not None and cfg.mode != mode:
            raise SchemaError("mode", f"config says {cfg.mode!r} but {mode!r} was requested")
        cfg = cfg.model_copy(update={"mode": mode})
    return cfg


def effective_config(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json", by_alias=True)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(effective_config(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- output helpers ------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    _write_json(out / "manifest.json", {
        "version": __version__, "mode": cfg.mode, "seed": cfg.seed, "config_sha256": config_hash(cfg),
        "files": [{"path": p.relative_to(out).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size}
                  for p in files],
    })


# -- modes -----------------------------------------------------------------------

def _ensemble(cfg: RunConfig, kernel, rng) -> ParticleEnsemble:
    p = cfg.particles
    ens = sample_ensemble(rng, p.N, kernel.dim, positions=p.positions, scale=p.scale,
                          omega_scale=p.omega_scale)
    if p.period is not None:
        ens.x = np.mod(ens.x, p.period)
    return ens


def _integrator(cfg: RunConfig) -> IntegratorConfig:
    b = cfg.integrator
    return IntegratorConfig(dt=b.dt, T=b.T, scheme=b.scheme, record_every=b.record_every)


def _mode_particles(cfg: RunConfig, out: Path, workers: int) -> None:
    kernel = cfg.kernel.build()
    rng = run_seed_stream(cfg.seed, 0)
    ens = _ensemble(cfg, kernel, rng)
    period = cfg.particles.period
    if cfg.mode == "particles-dnar":
        if not hasattr(kernel, "grad"):
            raise ConfigurationError("particles-dnar needs a potential, not a matrix weight")
        traj = integrate_dnar(ens, kernel, _integrator(cfg), period=period)
    else:
        weight = cfg.weight.build() if cfg.weight is not None else kernel
        if getattr(weight, "dim", kernel.dim) != kernel.dim:
            raise ConfigurationError("weight.dim must match kernel.dim")
        init = cfg.particles.initial_velocity
        if init == "consistent":
            if not hasattr(kernel, "grad"):
                raise ConfigurationError("consistent initial velocity needs a potential kernel")
            ens.v = dnar_velocity(ens, kernel, period=period)
        elif init == "omega":
            ens.v = ens.omega.copy()
        else:
            ens.v = np.zeros_like(ens.x)
        if hasattr(weight, "hess") and not hasattr(weight, "psi"):
            weight = FromKernel(weight)
        traj = integrate_cs(ens, weight, _integrator(cfg), period=period)
    write_trajectory_csv(traj, out / "trajectory.csv")
    _write_json(out / "summary.json", jsonable(trajectory_summary(traj)))


def _hydro_initial(cfg: RunConfig) -> GridField1D:
    h = cfg.hydro
    if h.initial == "uniform":
        return GridField1D(h.L, np.full(h.M, 1.0 / h.L), np.full(h.M, h.uniform_w))
    return smooth_initial_field(h.L, h.M, h.rho_amp, h.w_amp)


def _hydro_config(cfg: RunConfig, T: float | None = None, record_dt: float | None = None) -> HydroConfig:
    h = cfg.hydro
    kernel = cfg.kernel.build()
    if kernel.dim != 1:
        raise ConfigurationError("the hydrodynamic solver needs kernel.dim = 1")
    if not hasattr(kernel, "grad"):
        raise ConfigurationError("the hydrodynamic solver needs a potential kernel")
    return HydroConfig(kernel, T=T if T is not None else h.T, cfl=h.cfl, limiter=h.limiter,
                       record_dt=record_dt if record_dt is not None else h.record_dt,
                       window_inner=h.window_inner, window_outer=h.window_outer)


def _mode_hydro(cfg: RunConfig, out: Path, workers: int) -> None:
    # the kinetic residual integrates in time over the records, so keep them dense by default
    record_dt = cfg.hydro.record_dt if cfg.hydro.record_dt is not None else cfg.hydro.T / 400
    hcfg = _hydro_config(cfg, record_dt=record_dt)
    offset = hcfg.offset(cfg.hydro.L)
    sol = solve(_hydro_initial(cfg), hcfg)
    write_snapshots_csv(sol, out / "snapshots.csv")
    summary = {"conservation": conservation_summary(sol), "steps": sol.steps, "M": sol.M, "L": sol.L,
               "window": [offset.inner, offset.outer]}
    if cfg.hydro.diagnostics:
        mon = e_monitor(sol)
        summary["kinetic_residual"] = kinetic_residual(sol)
        summary["eam_residual"] = eam_residual(sol, offset)
        summary["e_monitor"] = {k: v for k, v in mon.items() if np.ndim(v) == 0}
    _write_json(out / "summary.json", jsonable(summary))


def metrics_report(A, B) -> dict:
    """All applicable distances between two loaded measures, with certificates."""
    a = A.flatten() if isinstance(A, FiberedMeasure) else A
    b = B.flatten() if isinstance(B, FiberedMeasure) else B
    c2 = optimal_coupling(a, b, 2, certify=True)
    c1 = optimal_coupling(a, b, 1, certify=True)
    report = {
        "w2": w2(a, b), "w1": w1(a, b), "dbl": dbl(a, b),
        "certificates": {
            "w2": {"method": c2.method, "dual_gap": c2.dual_gap, "marginal_error": c2.marginal_error},
            "w1": {"method": c1.method, "dual_gap": c1.dual_gap, "marginal_error": c1.marginal_error},
        },
    }
    if isinstance(A, FiberedMeasure) and isinstance(B, FiberedMeasure):
        from .errors import MarginalMismatch
        from .transport import fibered_w2
        try:
            report["fibered_w2"] = fibered_w2(A, B)
            report["fibered_w2_defined"] = True
        except MarginalMismatch as exc:
            report["fibered_w2"] = None
            report["fibered_w2_defined"] = False
            report["fibered_w2_error"] = f"MarginalMismatch: {exc}"
        val, coup = adapted_w2(A, B, return_coupling=True)
        report["adapted_w2"] = val
        report["certificates"]["adapted_w2"] = {"method": coup.method, "dual_gap": coup.dual_gap,
                                                "marginal_error": coup.marginal_error}
    return report


def _mode_metrics(cfg: RunConfig, out: Path, workers: int, a_path=None, b_path=None) -> None:
    if not a_path or not b_path:
        raise ConfigurationError("metrics needs --a and --b")
    _write_json(out / "metrics.json", jsonable(metrics_report(load_measure(a_path), load_measure(b_path))))


def _mode_study_cc(cfg: RunConfig, out: Path, workers: int) -> None:
    s = cfg.study
    h = cfg.hydro
    hcfg = _hydro_config(cfg, T=s.T, record_dt=s.dt)
    ref = solve(smooth_initial_field(h.L, s.reference_M, h.rho_amp, h.w_amp), hcfg)
    report = convergence_in_N(ref, hcfg.offset(h.L), s.N_list, s.seeds, cfg.seed, s.dt, s.T, workers,
                              s.slope_threshold)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    for r in report.series.pop("runs"):
        with open(runs_dir / f"N{r['N']}_seed{r['seed_index']}.csv", "w") as fh:
            fh.write("t,E1,E2,E\n")
            for t, e1, e2 in zip(r["times"], r["E1"], r["E2"]):
                fh.write(f"{t!r},{e1!r},{e2!r},{e1 + e2!r}\n")
    report.params["config_sha256"] = config_hash(cfg)
    report.write_json(out / "report.json")


def _write_series(path: Path, t, values, name: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"t,{name}\n")
        for a, b in zip(t, values):
            fh.write(f"{float(a)!r},{float(b)!r}\n")


def _mode_contractivity(cfg: RunConfig, out: Path, workers: int) -> None:
    kernel = cfg.kernel.build()
    s = cfg.study
    e1, e2 = twin_ensembles(run_seed_stream(cfg.seed, 0), s.N, kernel.dim, s.spread, s.omega_scale)
    report = contractivity_study(e1, e2, kernel, _integrator(cfg), s.max_samples)
    report.params["config_sha256"] = config_hash(cfg)
    _write_series(out / "series.csv", report.series["t"], report.series["fibered_w2"], "fibered_w2")
    report.write_json(out / "report.json")


def _mode_equilibrium(cfg: RunConfig, out: Path, workers: int) -> None:
    kernel = cfg.kernel.build()
    s = cfg.study
    rng = run_seed_stream(cfg.seed, 0)
    x = rng.uniform(-s.spread, s.spread, size=(s.N, kernel.dim))
    om = rng.normal(0.0, s.omega_scale, size=(s.N, kernel.dim))
    om -= om.mean(axis=0)
    report = equilibrium_study(ParticleEnsemble(x, None, om), kernel, _integrator(cfg), s.max_samples)
    report.params["config_sha256"] = config_hash(cfg)
    _write_series(out / "series.csv", report.series["t"], report.series["fibered_w2"], "fibered_w2")
    report.write_json(out / "report.json")


def _mode_equivalence(cfg: RunConfig, out: Path, workers: int) -> None:
    kernel = cfg.kernel.build()
    ens = _ensemble(cfg, kernel, run_seed_stream(cfg.seed, 0))
    res = equivalence_check(ens, kernel, _integrator(cfg))
    _write_json(out / "report.json", jsonable({k: v for k, v in res.items() if np.ndim(v) == 0}))


def _mode_kernel_check(cfg: RunConfig, out: Path, workers: int) -> None:
    kernel = cfg.kernel.build()
    b = cfg.kernel_check
    reports = [check_kernel(kernel, b.samples, cfg.seed, b.h).to_dict()]
    if hasattr(kernel, "hess"):
        reports.append(check_kernel(FromKernel(kernel), b.samples, cfg.seed, b.h).to_dict())
    if cfg.weight is not None:
        reports.append(check_kernel(cfg.weight.build(), b.samples, cfg.seed, b.h).to_dict())
    _write_json(out / "report.json", jsonable({"checks": reports, "passed": all(r["passed"] for r in reports)}))


_DISPATCH = {
    "particles-dnar": _mode_particles, "particles-cs": _mode_particles, "hydro": _mode_hydro,
    "metrics": _mode_metrics, "study-cc": _mode_study_cc, "study-contractivity": _mode_contractivity,
    "study-equilibrium": _mode_equilibrium, "study-equivalence": _mode_equivalence,
    "kernel-check": _mode_kernel_check,
}


def run(cfg: RunConfig, out: str | Path | None = None, workers: int = 1, a_path=None, b_path=None) -> Path:
    """Execute ``cfg.mode`` and write its artifacts; returns the output directory."""
    if cfg.mode is None:
        raise SchemaError("mode", "no mode given")
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "effective_config.json", effective_config(cfg))
    fn = _DISPATCH[cfg.mode]
    if cfg.mode == "metrics":
        fn(cfg, out, workers, a_path, b_path)
    else:
        fn(cfg, out, workers)
    write_manifest(out, cfg)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnar-lab", description="DNAR / Euler-alignment simulation laboratory")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON config file (optional for metrics)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides seed)")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for study-cc")
    p.add_argument("--a", dest="a_path", help="first measure file (metrics)")
    p.add_argument("--b", dest="b_path", help="second measure file (metrics)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        if args.config is None:
            if args.mode != "metrics":
                raise ConfigurationError("--config is required for this mode")
            text = ""
        else:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from exc
        cfg = parse_config(text, args.mode)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise SchemaError("seed", "must be an unsigned 64-bit integer")
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        out = run(cfg, args.out, args.workers, args.a_path, args.b_path)
    except ConfigurationError as exc:
        print(f"dnar-lab: configuration error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"dnar-lab: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except DnarError as exc:
        print(f"dnar-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # dataclass constructors reject bad combinations the schema cannot see
        print(f"dnar-lab: configuration error: {exc}", file=sys.stderr)
        return 2
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
