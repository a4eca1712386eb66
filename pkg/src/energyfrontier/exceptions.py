"""Exception hierarchy.

Data problems (bad CSV, unbalanced grids, invalid plans) derive from
:class:`DataError`; numerical failures (rank deficiency, non-convergence,
non-finite likelihoods) derive from :class:`NumericalError`. The CLI maps the
two families to distinct exit codes.
"""


class EnergyFrontierError(Exception):
    """Base class for all package errors."""


class DataError(EnergyFrontierError, ValueError):
    """Input data or configuration is malformed."""


class UnbalancedPanelError(DataError):
    def __init__(self, missing, duplicated=()):
        self.missing = list(missing)
        self.duplicated = list(duplicated)
        parts = []
        if self.missing:
            shown = ", ".join(f"({u}, {t})" for u, t in self.missing[:20])
            more = "" if len(self.missing) <= 20 else f" ... (+{len(self.missing) - 20} more)"
            parts.append(f"missing (unit, year) pairs: {shown}{more}")
        if self.duplicated:
            shown = ", ".join(f"({u}, {t})" for u, t in self.duplicated[:20])
            parts.append(f"duplicate (unit, year) pairs: {shown}")
        super().__init__("unbalanced panel; " + "; ".join(parts))


class NumericalError(EnergyFrontierError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class RankDeficientError(NumericalError):
    def __init__(self, dependent_columns, rank, n_columns):
        self.dependent_columns = list(dependent_columns)
        self.rank = rank
        self.n_columns = n_columns
        super().__init__(
            f"design matrix is rank deficient (rank {rank} < {n_columns}); "
            f"linearly dependent columns: {', '.join(map(str, self.dependent_columns))}"
        )


class LikelihoodError(NumericalError):
    def __init__(self, row, message="non-finite log-likelihood contribution"):
        self.row = row
        super().__init__(f"{message} at row {row}")


class ConvergenceError(NumericalError):
    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class BootstrapFailureError(NumericalError):
    def __init__(self, n_failed, n_total):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(
            f"{n_failed} of {n_total} bootstrap replicates failed (> 20%); "
            "inspect the model specification and the failing replicates"
        )
