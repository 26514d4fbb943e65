"""A smooth run of the one-dimensional hydrodynamic solver on the unit torus.

Solves the continuity equation with transported preferred velocity w on three
grids, prints the self-convergence ratios of the density, and evaluates how
well the monokinetic measure built from the solution satisfies the kinetic
equation in weak form.
"""
from dnarlab import HydroConfig, SmoothCompact, conservation_summary, kinetic_residual, solve
from dnarlab.hydro1d import l1_difference, smooth_initial_field

kernel = SmoothCompact(radius=0.2, amplitude=1.0, dim=1)
sols = {}
for M in (128, 256, 512):
    sols[M] = solve(smooth_initial_field(1.0, M, 0.3, 0.05), HydroConfig(kernel, T=1.0, record_dt=1.0 / 400))
    c = conservation_summary(sols[M])
    print(f"M = {M:4d}: steps {c['steps']:5d}, mass drift {c['relative_mass_drift']:.1e}, "
          f"kinetic residual {kinetic_residual(sols[M]):.2e}")

e1 = l1_difference(sols[128].rho[-1], sols[256].rho[-1], 1.0)
e2 = l1_difference(sols[256].rho[-1], sols[512].rho[-1], 1.0)
print(f"L1 differences {e1:.2e}, {e2:.2e}; ratio {e1 / e2:.2f} (first order gives 2)")
