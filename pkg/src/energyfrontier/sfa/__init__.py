"""Stochastic frontier estimation, scores and diagnostics."""

from .diagnostics import (
    VarianceShares,
    check_sign_predictions,
    lr_test,
    variance_shares,
    variance_shares_from,
)
from .estimator import (
    SfaFit,
    SfaSpec,
    StochasticFrontier,
    WrongSkewWarning,
    bc_efficiency,
    design_arrays,
    fit_mle,
    jlms_scores,
)
from .likelihood import SfaParams, loglik, loglik_params, loglik_value
from .scores import battese_coelli, jlms, posterior_moments

__all__ = [
    "SfaFit",
    "SfaParams",
    "SfaSpec",
    "StochasticFrontier",
    "VarianceShares",
    "WrongSkewWarning",
    "battese_coelli",
    "bc_efficiency",
    "check_sign_predictions",
    "design_arrays",
    "fit_mle",
    "jlms",
    "jlms_scores",
    "loglik",
    "loglik_params",
    "loglik_value",
    "lr_test",
    "posterior_moments",
    "variance_shares",
    "variance_shares_from",
]
