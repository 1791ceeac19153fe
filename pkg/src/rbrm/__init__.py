"""Robust belief roadmap: covariance bounds under stochastic misdetections,
propagated over a probabilistic roadmap, with Monte Carlo validation."""

from .bounds import (
    HorizonBoundInputs,
    StepBoundParams,
    bound_horizon_closed_form,
    bound_step_deterministic,
    bound_step_simplified,
    bound_step_stochastic,
    bound_step_uniform,
    make_step_params,
    propagate_bound_sequence,
    subset_coeffs,
)
from .errors import (
    ComplexityGuardError,
    InvalidInputError,
    NoPathError,
    NumericalFailureError,
    OutOfRangeError,
    RBRMError,
    ScenarioError,
    SingularMatrixError,
    UnsupportedInputError,
)
from .estimation import BeliefState, ekf_predict, ekf_update, run_filter
from .kernels import BACKEND
from .models import (
    ConstantField,
    GradientField,
    ProcessModel,
    RegionField,
    SensorSpec,
    VehicleState,
    detection_prob,
    info_matrix,
    measurement_noise_sigma,
    propagate_state,
    sample_measurement,
)
from .numerics import EigExtremes, eig_extremes, invert_pd, is_psd
from .roadmap import (
    BeliefNode,
    EdgeTransfer,
    Roadmap,
    Workspace,
    apply_transfer,
    brm_baseline_search,
    build_prm,
    compile_edge_transfer,
    rbrm_search,
    segment_collision_free,
)
from .scenario import Scenario, build_models, build_roadmap, load_bundled, load_scenario, save_scenario
from .simulate import (
    MetricsTrace,
    PathProblem,
    SweepGrid,
    confidence_ellipses,
    exact_expectation_small,
    path_problem,
    run_monte_carlo,
    sweep_reliability,
)

__version__ = "0.1.0"
