"""Spectral simulation and large deviations for a point-source reservoir SPDE."""
from .coefficients import (
    CoefficientOperator,
    ConditionReport,
    PollutantCoefficients,
    pollutant_drift,
    pollutant_jump,
    verify_conditions,
)
from .dynamics import (
    BlowUpError,
    ConvergenceError,
    PathGrid,
    energy_residual,
    simulate_euler,
    simulate_exact,
    skeleton_closed_form,
    solve_skeleton_picard,
    steady_state,
)
from .ldp import (
    EndpointEvent,
    EndpointKernel,
    Estimate,
    RateResult,
    endpoint_kernel,
    estimate_is,
    estimate_plain,
    ldp_diagnostic,
    rate_endpoint_dual,
    rate_endpoint_grid,
    saddlepoint_probability,
)
from .marks import HalfNormal, IntegrabilityError, MarkDistribution, PointMass, Uniform
from .prm import (
    Constant,
    Control,
    ExponentialTilt,
    JumpPath,
    Tabulated,
    cost_LT,
    entropy_inequalities,
    entropy_l,
    girsanov_log_weight,
    sample_controlled_prm,
    sample_prm,
)
from .spectral import (
    ModelParams,
    SourceSpec,
    bracket,
    eigenfunction_value,
    eigenvalue,
    sobolev_norm_sq,
    theta_map,
)

__version__ = "0.1.0"
