"""kmeflow: kernel mean embedding particle flows for Bayesian sampling,
with Kalman-Bucy and ensemble Kalman filter baselines and a Lorenz-63
data-assimilation harness."""

from .baselines import (
    GaussianObservationModel,
    enkf_analysis,
    kalman_bucy_velocity,
    run_kalman_bucy_flow,
)
from .errors import (
    ConfigError,
    DegenerateEnsembleError,
    DivergenceError,
    KmeFlowError,
    LikelihoodEvaluationError,
    NumericsError,
    ScenarioFailureError,
)
from .flow import (
    Ensemble,
    FlowConfig,
    FlowStep,
    assemble_correction_vector,
    assemble_gram,
    assemble_h_vector,
    ensemble_covariance,
    flow_step,
    run_flow,
    solve_weights,
)
from .kernels import RBF, Kernel, Quadratic, kernel_from_name
from .lorenz63 import (
    AssimilationResult,
    AssimilationScenario,
    Lorenz63Params,
    forecast_ensemble,
    generate_truth_and_observations,
    lorenz_rhs,
    rk4_step,
    run_assimilation,
)
from .metrics import MomentSummary, mmd2, mmd2_quadratic_closed_form, moments, rmse_spacetime, w2_1d
from .models import (
    AnalyticGaussian,
    AnalyticMixture,
    GaussianPrior,
    InferenceProblem,
    MixturePrior,
    NumericTarget1D,
    SkewNormal1D,
    gaussian_nll,
    mixture_nll,
    prior_logpdf,
    problem_preset,
    sample_skew_normal_1d,
    skew_nll,
)
from .sampling import (
    SOBOL_DIRECTION_NUMBERS,
    SeededRng,
    normal_draws,
    normal_inverse_cdf,
    seeded_generator,
    sobol_gaussian,
    sobol_points,
)

__version__ = "0.1.0"
