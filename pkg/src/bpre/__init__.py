"""Critical branching processes in i.i.d. random environments with
linear-fractional offspring laws: exact quenched conditional laws given the
extinction time, conditioned-walk limit samplers, and Monte Carlo pipelines
checking the limit behavior."""

__version__ = "0.1.0"

from .conditioned import (
    LimitDraw,
    WeightedPath,
    limit_pgf,
    limit_qplus,
    limit_zeta_minus,
    sample_limit_batches,
    sample_minus,
    sample_plus,
    sample_theta_left,
    sample_theta_right,
)
from .env import (
    EnvSpec,
    EnvironmentPath,
    OffspringLaw,
    estimate_rho,
    law_from_params,
    sample_environment,
)
from .errors import AcceptanceStarvationError, ConfigError, NumericalBreakdownError
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    ks_one_sample,
    mann_kendall_pvalue,
    run_diagnostics,
    run_theorem1,
    run_theorem2,
    weighted_ks_two_sample,
)
from .fluctuation import (
    LadderStats,
    RenewalTable,
    arcsine_cdf,
    estimate_renewals,
    ladder_epochs,
    leftmost_min_index,
)
from .lf import (
    ConditionalLaw,
    LFMap,
    SegmentQuantities,
    compose,
    conditional_laplace,
    conditional_law,
    conditional_pgf,
    eval_f,
    eval_survival,
    extinction_time_pmf,
    horizon_survival,
    lf_of_law,
    sample_conditional_Z,
    sandwich_bounds,
    segment_map,
    segment_quantities,
)
from .rng import substream
