"""Energy-demand frontier toolkit.

Panel ingestion and transforms, LMDI decomposition, a heteroskedastic
stochastic frontier estimator, variable-importance measures, a state-level
block bootstrap and synthetic data with reference oracles.
"""

__version__ = "0.1.0"

from .exceptions import (
    BootstrapFailureError,
    ConvergenceError,
    DataError,
    EnergyFrontierError,
    LikelihoodError,
    NumericalError,
    RankDeficientError,
    UnbalancedPanelError,
)
from .panel import (
    SUBSETS,
    ColumnSpec,
    DesignMatrix,
    Panel,
    SubsetRule,
    TransformPlan,
    apply_transforms,
    filter_subset,
    ingest_csv,
    mundlak_augment,
)
from .sfa import SfaSpec, StochasticFrontier, fit_mle, variance_shares

__all__ = [
    "__version__",
    "BootstrapFailureError",
    "ColumnSpec",
    "ConvergenceError",
    "DataError",
    "DesignMatrix",
    "EnergyFrontierError",
    "LikelihoodError",
    "NumericalError",
    "Panel",
    "RankDeficientError",
    "SUBSETS",
    "SfaSpec",
    "StochasticFrontier",
    "SubsetRule",
    "TransformPlan",
    "UnbalancedPanelError",
    "apply_transforms",
    "filter_subset",
    "fit_mle",
    "ingest_csv",
    "mundlak_augment",
    "variance_shares",
]
