"""Exponential stability of linear neutral delay systems via the delay Lyapunov matrix."""

from .precision import get_precision, set_precision
from .system import (AssumptionError, ConfigError, NeutralSystem, StructuralError,
                     example2_matrices, load_config, scalar_system, validate)
from .lyapunov import DelayLyapunovMatrix, eval_U, solve_delay_lyapunov
from .moments import assemble_P
from .stability import (StabilityReport, compute_N_star, full_test, lambert_w, psd_check,
                        sufficiency_constants)
from .oracle import characteristic_roots, simulate_method_of_steps

__version__ = "0.1.0"
