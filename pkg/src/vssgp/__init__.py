"""Variational sparse spectrum Gaussian process regression."""

from vssgp._backend import available as available_backends
from vssgp._backend import name as backend_name
from vssgp._backend import use as use_backend
from vssgp.baselines import exact_gp, fit_random_projections, fit_ssgp, mc_log_evidence
from vssgp.bounds import (
    BoundKind,
    CoefficientSolve,
    NumericalError,
    elbo_factorised,
    elbo_optimal,
    elbo_pointwise,
    elbo_stochastic,
    kl_coeff,
    kl_freq,
    solve_optimal_coefficients,
)
from vssgp.features import (
    FeatureMoments,
    expected_cos_gaussian,
    expected_cos_sq_gaussian,
    expected_cos_uniform_phase,
    expected_phi,
    expected_phitphi,
    feature_moments,
    phi_row,
)
from vssgp.imputation import ImputationTask, make_imputation_task, rmse, stft_rmse
from vssgp.io import DataFormatError, load_csv, load_model, save_model
from vssgp.model import (
    Dataset,
    FixedPhases,
    KernelSpec,
    Layout,
    ParameterError,
    ParameterVector,
    SMComponent,
    VariationalPhases,
    VariationalState,
    kernel_exact,
    pack,
    unpack,
)
from vssgp.predict import PredictiveDensity, predict_batch, predictive_mean, predictive_variance
from vssgp.training import (
    FitConfig,
    FitTrace,
    FittedModel,
    bound_and_gradient,
    fit_adaptive_sgd,
    fit_quasi_newton,
    fit_vssgp,
    init_state,
)

__version__ = "0.1.0"
