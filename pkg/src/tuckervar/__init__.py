"""Supervised factor modelling of high-dimensional linear time series.

Low-Tucker-rank, lag-sparse VAR sieve estimation by alternating gradient
descent with group hard-thresholding, plus simulation and rolling-forecast
harnesses.
"""
from .exceptions import (DivergenceError, InsufficientDataError, ParameterError,
                         SelectionError, ShapeError, TuckerVarError, ValidationError)
from .tensor import (GroupSupport, Tensor3, TuckerFactors, fold, group_norm_sum,
                     group_norms, hard_threshold, matricize, mode_product,
                     reconstruct, soft_threshold)
from .process import (GlpModel, PanelData, ar_to_ma, check_stationarity, haar_orthogonal,
                      implied_ma_coefficients, implied_var_coefficients, ma_to_ar,
                      simulate, truncation_error)
from .estimator import (DesignMatrices, FitConfig, FitResult, build_design,
                        fit_agd, fit_group_lasso_reference, grad_factors, grad_full,
                        init_factors, loss, penalized_loss, select_aic)

__version__ = "0.1.0"
