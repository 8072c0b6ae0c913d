"""drifthom: a numerical laboratory for advection-diffusion in
divergence-free random media.

The pipeline: synthesize space-time random environments (uniformly elliptic
diffusion a, skew stream matrix s, spatially constant drift bbar), solve
regularized corrector problems to obtain effective matrices, estimate the
long-run covariance of rescaled drift paths, and compare eps-scale solves
against the constant-coefficient limit equation with a Brownian shift.
"""

from .bbar import BBAR_MODELS, make_bbar, ou_longrun_cov, rw_longrun_cov
from .config import ExperimentConfig, parse_config, parse_config_text, \
    serialize_config
from .container import load_environment, read_container, save_environment, \
    write_container
from .corrector import (
    CorrectorField,
    CorrectorProblem,
    EffectiveMatrix,
    delta_extrapolation,
    effective_matrix,
    energy_check,
    solve_corrector,
    sublinearity_diagnostic,
)
from .environment import (
    EnvironmentRealization,
    SpectralParams,
    build_environment,
    drift_of,
    environment_from_fields,
    eval_rescaled,
    sample_gaussian_field,
)
from .errors import (
    BlowUp,
    DimensionMismatch,
    DivergenceError,
    DriftHomError,
    EllipticityError,
    EllipticityViolation,
    IllPosed,
    InsufficientSamples,
    NonConvergence,
    NonMonotoneWarning,
    ParseError,
    PlanarStreamWarning,
    ResolutionError,
    SlowMixingWarning,
    StabilityError,
    ValidationError,
)
from .experiment import (
    ConvergenceReport,
    ResidualPair,
    homogenization_run,
    law_distance,
    model_sigma,
    permutation_law_test,
    perturbed_test_residual,
    probe_functions,
    probe_vectors,
    report_to_dict,
)
from .grid import (
    SpaceTimeGrid,
    fourier_shift,
    periodic_interp,
    spatial_divergence,
    spatial_gradient,
    torus_mean,
)
from .manifest import RunManifest, config_hash, new_manifest, write_manifest
from .path_clt import (
    BlockIncrements,
    CovarianceEstimate,
    DriftPath,
    block_increments,
    donsker_test,
    empirical_sigma,
    estimate_sigma_series,
    integrate_path,
    moment_check,
)
from .pde_solver import (
    CauchyData,
    SolutionField,
    cauchy_preset,
    choose_dt,
    solve_epsilon_pde,
    solve_limit_spde,
    solve_transported_pde,
)
from .seeding import derive_seed, rng_for
from .stream_solver import StreamRecovery, solve_stream_matrix, \
    solve_stream_regularized

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
