"""Poisson space-time ARMA models with covariates.

Simulation with copula-coupled Poisson marginals, constrained
quasi-maximum-likelihood fitting with analytic derivatives, sandwich
covariance inference (Wald tests, QIC), closed-form moments for the
linear link, forecasting metrics, and a Monte Carlo study harness.
"""

from .copulas import CopulaSpec, sample_copula, theoretical_kendall_tau
from .estimate import FitConfig, FitResult, default_start, fit
from .forecast import (explained_deviance, mae, mse_params, mspe,
                       one_step_forecast, rolling_one_step)
from .inference import (WaldResult, compare_models, qic, qic_from_parts,
                        single_param_test, wald_test)
from .likelihood import (FilterState, InfoMatrices, QuasiLikelihood,
                         filter_intensity, info_matrices, quasi_log_lik, score)
from .model import (ModelSpec, ParameterVector, autocovariance,
                    check_identifiability, coefficient_matrices, pack,
                    param_names, spectral_stationarity_norm, stationarity_margin,
                    stationary_mean, unpack)
from .simulate import (SimulationConfig, SimulationResult,
                       generate_arma_covariate, sample_counts, simulate_path)
from .study import (CovariateRecipe, FitTask, StudyPlan, StudyReport, HypothesisTest,
                    WeightsRef, covariate_information_diagnostic, power_curve,
                    run_study, splitmix64)
from .weights import (AdjacencyList, GridSpec, WeightMatrixSet, build_grid_4nn,
                      build_grid_directional, column_sum_norm_tau, from_adjacency,
                      validate)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyList", "CopulaSpec", "CovariateRecipe", "FilterState", "FitConfig",
    "FitResult", "FitTask", "GridSpec", "InfoMatrices", "ModelSpec",
    "ParameterVector", "QuasiLikelihood", "SimulationConfig", "SimulationResult",
    "StudyPlan", "StudyReport", "HypothesisTest", "WaldResult", "WeightMatrixSet",
    "WeightsRef", "autocovariance", "build_grid_4nn", "build_grid_directional",
    "check_identifiability", "coefficient_matrices", "column_sum_norm_tau",
    "compare_models", "covariate_information_diagnostic", "default_start",
    "explained_deviance", "filter_intensity", "fit", "from_adjacency",
    "generate_arma_covariate", "info_matrices", "mae", "mse_params", "mspe",
    "one_step_forecast", "pack", "param_names", "power_curve", "qic",
    "qic_from_parts", "quasi_log_lik", "rolling_one_step", "run_study",
    "sample_copula", "sample_counts", "score", "simulate_path",
    "single_param_test", "spectral_stationarity_norm", "splitmix64",
    "stationarity_margin", "stationary_mean", "theoretical_kendall_tau",
    "unpack", "validate", "wald_test",
]
