"""Least squares and two-way within transformation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import as_1d, check_balanced_index, check_same_length
from .exceptions import DataError, RankDeficientError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    r2: float
    names: list
    rank: int

    @property
    def full_rank(self) -> bool:
        return self.rank == len(self.coef)


def centered_r2(y, resid) -> float:
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        return 0.0
    return 1.0 - float(resid @ resid) / tss


def ols_fit(X, y, names=None, tol=RANK_TOL) -> OlsFit:
    """Least squares through a column-pivoted QR factorisation.

    Rank is the number of diagonal entries of R whose magnitude exceeds
    ``tol * |R[0, 0]|``; if it falls short of the column count a
    :class:`RankDeficientError` naming the pivoted-out columns is raised.
    R² always uses the centred total sum of squares.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = as_1d(y)
    check_same_length(X, y, names=["X", "y"])
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if k == 0:
        return OlsFit(np.zeros(0), y.copy(), np.zeros_like(y), centered_r2(y, y), names, 0)
    if n < k:
        raise DataError(f"fewer rows ({n}) than columns ({k})")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d[0])) if d[0] > 0 else 0
    if rank < k:
        raise RankDeficientError([names[j] for j in piv[rank:]], rank, k)
    b = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(k)
    coef[piv] = b
    fitted = X @ coef
    resid = y - fitted
    return OlsFit(coef, resid, fitted, centered_r2(y, resid), names, rank)


def twoway_within(X, y, unit_ids, year_ids):
    """Remove unit and year means: x - x̄_i. - x̄_.t + x̄_.. (balanced panels only)."""
    unit_ids = np.asarray(unit_ids)
    year_ids = np.asarray(year_ids)
    check_balanced_index(unit_ids, year_ids)
    y = as_1d(y)
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    check_same_length(X, y, unit_ids, year_ids, names=["X", "y", "unit_ids", "year_ids"])
    return (_within(X, unit_ids, year_ids)[:, 0] if squeeze else _within(X, unit_ids, year_ids),
            _within(y[:, None], unit_ids, year_ids)[:, 0])


def _group_mean(A, codes, n_groups):
    counts = np.bincount(codes, minlength=n_groups).astype(np.float64)
    out = np.empty((n_groups, A.shape[1]))
    for j in range(A.shape[1]):
        out[:, j] = np.bincount(codes, weights=A[:, j], minlength=n_groups) / counts
    return out[codes]


def _within(A, unit_ids, year_ids):
    ucodes = np.unique(unit_ids, return_inverse=True)[1]
    tcodes = np.unique(year_ids, return_inverse=True)[1]
    nu, nt = ucodes.max() + 1, tcodes.max() + 1
    return A - _group_mean(A, ucodes, nu) - _group_mean(A, tcodes, nt) + A.mean(axis=0)
