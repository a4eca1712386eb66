"""Input validation helpers shared by the estimators."""

import numpy as np
import pandas as pd
from sklearn.utils.validation import check_array

from .exceptions import DataError


def as_2d(X, name="X", dtype=np.float64):
    """Return ``X`` as a finite float 2-D array, keeping column names if any."""
    names = list(X.columns) if isinstance(X, pd.DataFrame) else None
    arr = check_array(X, dtype=dtype, ensure_2d=True, ensure_all_finite=True,
                      ensure_min_features=0, input_name=name)
    if names is None:
        names = [f"x{j}" for j in range(arr.shape[1])]
    return arr, names


def as_1d(y, name="y"):
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise DataError(f"{name} contains a non-finite value at row {bad}")
    return arr


def check_same_length(*arrays, names=None):
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={m}" for n, m in zip(names, lengths))
        raise DataError(f"inconsistent row counts: {desc}")


def check_positive(values, name, labels=None):
    """Raise if any entry is not strictly positive, naming the first bad row."""
    values = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        i = int(bad[0])
        where = labels[i] if labels is not None else i
        raise DataError(f"column {name!r} has non-positive value {values[i]!r} at row {where}")


def check_balanced_index(unit_ids, year_ids):
    """Return sorted unique units and years; raise if the grid is not balanced."""
    from .exceptions import UnbalancedPanelError

    units = pd.Index(pd.unique(np.asarray(unit_ids)))
    years = pd.Index(np.unique(np.asarray(year_ids)))
    pairs = pd.MultiIndex.from_arrays([np.asarray(unit_ids), np.asarray(year_ids)])
    dup = pairs[pairs.duplicated()].unique()
    full = pd.MultiIndex.from_product([units, years])
    missing = full.difference(pairs)
    if len(dup) or len(missing):
        raise UnbalancedPanelError(list(missing), list(dup))
    return units, years
