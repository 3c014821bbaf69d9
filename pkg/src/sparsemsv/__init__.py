"""Sparse multivariate stochastic volatility via penalized OLS."""

__version__ = "0.1.0"

from .errors import MsvError
from .estimator import MsvModel, fit_msv, fit_msv_full, load_model, save_model
from .evaluation import dm_test, frobenius_distance, mcs, min_variance_weights, var_threshold
from .panels import ReturnPanel, log_square_transform, read_returns_csv
from .penalized_var import CvPlan, SolverOpts, fit_penalized_var, kkt_check
from .penalties import PenaltySpec
from .simulate import DgpSpec, simulate
from .smoother import CovSequence, forecast, mmsle_smooth

__all__ = [
    "CovSequence", "CvPlan", "DgpSpec", "MsvError", "MsvModel", "PenaltySpec", "ReturnPanel",
    "SolverOpts", "dm_test", "fit_msv", "fit_msv_full", "fit_penalized_var", "forecast",
    "frobenius_distance", "kkt_check", "load_model", "log_square_transform", "mcs",
    "min_variance_weights", "mmsle_smooth", "read_returns_csv", "save_model", "simulate",
    "var_threshold",
]
