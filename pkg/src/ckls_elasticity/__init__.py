"""Elasticity estimation for CKLS diffusions via a power transform to square-root form."""

from .errors import CklsError
from .model import (
    CirParams,
    CklsParams,
    Path,
    SamplingGrid,
    ckls_stationary_density,
    cir_stationary_moment,
    elasticity_from_beta,
    girsanov_kernel,
    girsanov_log_weight,
    map_ckls_to_cir,
    transform_T,
    transform_T_inverse,
    validate_ckls,
)
from .simulate import (
    RngStream,
    Scheme,
    SimulationConfig,
    build_grid,
    simulate_cir_euler,
    simulate_cir_exact,
    simulate_ckls,
    subsample,
)
from .estimate import (
    ElasticityReport,
    EstimateOptions,
    estimate_elasticity,
    initial_k_aggregated,
    plugin_beta,
    pr_estimate,
)

__version__ = "0.1.0"
