"""Ground-state stabilization of a bilinearly controlled 1-D Schrodinger equation.

Simulates the closed-loop averaged system and the highly oscillating system
it approximates, on a spectral Galerkin truncation of the interval [0,1] with
Dirichlet ends.  The feedback damps a Lyapunov function built from excited
H^2-energy plus the ground-state population defect; the explicit oscillating
control replays the averaged feedback with a fast sinusoidal carrier.
"""

__version__ = "0.1.0"

from .dynamics import (
    IntegratorSpec,
    LockstepState,
    MonitorError,
    Trajectory,
    averaged_rhs,
    control_value,
    oscillating_rhs,
    run,
    step_euler,
    step_strang,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    PRESETS,
    TrajectoryRecord,
    build_setup,
    export_plotdata,
    load_config,
    load_record,
    parse_config,
    refinement_check,
    run_experiment,
    run_sweep,
)
from .hypotheses import CouplingReport, check_hypotheses, coupling_coefficients
from .metrics import dist_to_target, h2_gap, hs_norm, sobolev_weights
from .operators import (
    ControlOperators,
    FeedbackParams,
    build_operators,
    damping,
    feedback_I,
    feedback_alpha,
    feedback_beta,
    feedback_terms,
    gamma_for_target,
    lyapunov,
    normalize_state,
)
from .spectral import (
    EigensolverError,
    GridFunction,
    QuadratureError,
    SineBasisSpec,
    SpectralBasis,
    eigenfunction_values,
    grid_function,
    potential_matrix,
    quadrature,
    solve_eigenbasis,
)

__all__ = [
    "__version__",
    # spectral
    "GridFunction",
    "grid_function",
    "SineBasisSpec",
    "SpectralBasis",
    "quadrature",
    "potential_matrix",
    "solve_eigenbasis",
    "eigenfunction_values",
    "QuadratureError",
    "EigensolverError",
    # operators
    "ControlOperators",
    "FeedbackParams",
    "build_operators",
    "normalize_state",
    "lyapunov",
    "feedback_terms",
    "feedback_I",
    "feedback_alpha",
    "feedback_beta",
    "damping",
    "gamma_for_target",
    # metrics
    "sobolev_weights",
    "hs_norm",
    "dist_to_target",
    "h2_gap",
    # dynamics
    "IntegratorSpec",
    "LockstepState",
    "Trajectory",
    "MonitorError",
    "averaged_rhs",
    "oscillating_rhs",
    "control_value",
    "step_euler",
    "step_strang",
    "run",
    # hypotheses
    "CouplingReport",
    "coupling_coefficients",
    "check_hypotheses",
    # harness
    "ConfigError",
    "ExperimentConfig",
    "TrajectoryRecord",
    "PRESETS",
    "parse_config",
    "load_config",
    "build_setup",
    "run_experiment",
    "run_sweep",
    "refinement_check",
    "export_plotdata",
    "load_record",
]
