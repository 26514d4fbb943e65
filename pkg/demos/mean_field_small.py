"""A pocket-sized version of the particle-to-continuum study.

Particles start on the characteristics of a hydrodynamic reference solution
and evolve under the Cucker-Smale system with the matching weight. The
modulated error E = E1 + E2 should shrink as the particle number grows.
"""
from dnarlab import HydroConfig, SmoothCompact, convergence_in_N, solve
from dnarlab.hydro1d import smooth_initial_field

cfg = HydroConfig(SmoothCompact(0.2, 1.0, 1), T=0.5, record_dt=0.01)
reference = solve(smooth_initial_field(1.0, 1024, 0.3, 0.05), cfg)
report = convergence_in_N(reference, cfg.offset(1.0), N_list=[25, 50, 100, 200], seeds=4)

for N, e in zip(report.series["N"], report.series["median_sup_E"]):
    print(f"N = {N:4d}: median sup_t E = {e:.2e}")
print(f"log-log slope of sup E2: {report.fitted['slope_sup_E2']:.2f}")
print("checks:", report.passed)
