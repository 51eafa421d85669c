"""Spectral NS-alpha and Galerkin Navier-Stokes solvers with empirical
statistical-solution diagnostics on the periodic box."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: E402
    FROZEN_M,
    AprioriEnvelope,
    SolverConfig,
    Trajectory,
    apriori_check,
    calibrate_M,
    energy_equality_residual,
    fb_norm,
    solve,
    step,
    strengthened_energy_check,
)
from .errors import (  # noqa: E402
    BoxMismatchError,
    ConfigurationError,
    DivergedError,
    ExperimentError,
    InvalidModeError,
    InvalidPsiError,
    PreconditionError,
    TimeRangeError,
)
from .functionals import (  # noqa: E402
    PSI_IDENTITY,
    PSI_SATURATING,
    PSI_TANH,
    CylindricalFunctional,
    PsiFunction,
    default_dictionary,
)
from .measures import (  # noqa: E402
    BallSampler,
    DiracSampler,
    EnsembleMeasure,
    GaussianSampler,
    TrajectoryMetric,
    ensemble_semidistance,
    envelope_membership,
    push_initial,
    restrict,
    shift,
    time_project,
    traj_distance,
)
from .spectral import (  # noqa: E402
    BoxSpec,
    PhysParams,
    SpectralField,
    eigenfunction,
    galerkin_project,
    helmholtz_filter,
    inner_product,
    leray_project,
    nonlinear_B,
    nonlinear_Btilde,
    norm_DAdual,
    norm_H,
    norm_V,
    stokes_eigenvalue,
)
from .verifier import (  # noqa: E402
    convergence_experiment,
    liouville_residual,
    mean_strengthened_energy_residual,
    stationary_experiment,
    vf_diagnostics,
)
