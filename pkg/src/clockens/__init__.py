"""Mixed Cs/H-maser clock ensembles: models, Kalman filtering on the
observable part, ensemble-mean synchronisation and Hadamard-variance tools."""

__version__ = "0.1.0"

from .clock_models import ClockKind, ClockSpec, ClockState, BaseMatrices  # noqa: E402
from .ensemble import EnsembleSpec, SimulationTrace, assemble_system, simulate  # noqa: E402
from .decomposition import DecompositionBundle, build_transform  # noqa: E402
from .filters import (SteadyGains, ckf_init, ckf_step, solve_cross_covariance,  # noqa: E402
                      solve_riccati, sstkf_step, steady_gains, tkf_init, tkf_step)
from .control import closed_loop_simulate, feedback_gains  # noqa: E402
from .stability import (PsiModel, hvar_estimate, hvar_psi, optimal_weight,  # noqa: E402
                        weight_long_term, weight_short_term)
