"""dnarlab: particles, optimal transport and 1D hydrodynamics for nonlocal alignment models."""
import os as _os

# POT probes every array backend it can find on import; none of them is needed here
for _name in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    _os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

__version__ = "0.1.0"

from .errors import (CenterMismatch, ConfigurationError, DimensionMismatch, DnarError, DomainMismatch,  # noqa: E402
                     FormatError, KernelTooWide, MarginalMismatch, NonFiniteState, NonNormalizable,
                     NonzeroMeanOmega, NumericalError, SchemaError, SingularEvaluation, VersionError)
from .kernel import (FromKernel, Quadratic, ScalarBump, SmoothCompact, WeaklySingular, check_kernel,  # noqa: E402
                     eval_gradK, eval_K, eval_Psi, kernel_from_dict)
from .particle import (IntegratorConfig, ParticleEnsemble, Trajectory, cs_rhs, diagnostics,  # noqa: E402
                       dnar_velocity, equivalence_check, integrate_cs, integrate_dnar, sample_ensemble)
from .transport import (DiscreteMeasure, Fiber, FiberedMeasure, adapted_w2, dbl, dbl_lp,  # noqa: E402
                        empirical_from_ensemble, fibered_w2, grid_to_measure, load_measure, marginal, moments,
                        optimal_coupling, pushforward, w1, w2)
from .hydro1d import (GridField1D, HydroConfig, HydroSolution, PeriodicOffset, compute_u, conservation_summary,  # noqa: E402
                      e_monitor, eam_residual, kinetic_residual, smooth_initial_field, solve)
from .meanfield import (CCErrorSeries, StudyReport, cc_bound_check, cc_error_series,  # noqa: E402
                        characteristic_ensemble, contractivity_study, convergence_in_N, equilibrium_study,
                        quadratic_oracle, run_seed_stream, twin_ensembles)

__all__ = [name for name in dir() if not name.startswith("_")]
