"""Post-estimation diagnostics: variance shares, LR tests, sign predictions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from ..exceptions import DataError


@dataclass(frozen=True)
class VarianceShares:
    s_F: float
    s_U: float
    s_V: float
    cov_FU: float
    var_y: float
    var_F: float
    var_U: float
    sigma_v2: float

    def to_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def variance_shares_from(y, frontier, u_hat, sigma_v) -> VarianceShares:
    """Split Var(y) into frontier, inefficiency and noise shares.

    The residual covariance ``Var(y) - Var(F) - Var(u) - sigma_v^2`` is
    allocated half to the frontier and half to inefficiency, so the three
    shares sum to one.
    """
    var_y = float(np.var(y, ddof=1))
    if var_y <= 0:
        raise DataError("response has zero variance")
    var_F = float(np.var(frontier, ddof=1))
    var_U = float(np.var(u_hat, ddof=1))
    sv2 = float(sigma_v) ** 2
    cov = var_y - var_F - var_U - sv2
    s_F = (var_F + 0.5 * cov) / var_y
    s_U = (var_U + 0.5 * cov) / var_y
    s_V = sv2 / var_y
    return VarianceShares(s_F, s_U, s_V, cov, var_y, var_F, var_U, sv2)


def variance_shares(fit, dm=None) -> VarianceShares:
    """Variance shares of a fitted frontier (year effects included in F)."""
    y = fit.y if dm is None else dm.y
    return variance_shares_from(y, fit.frontier, fit.jlms, fit.sigma_v)


def lr_test(ll_restricted: float, ll_unrestricted: float, df: int):
    """Likelihood-ratio statistic ``2 (ll_u - ll_r)`` and its chi-square upper-tail p-value."""
    if df <= 0:
        raise ValueError("df must be positive")
    if ll_unrestricted < ll_restricted:
        warnings.warn("unrestricted log-likelihood is below the restricted one", RuntimeWarning, stacklevel=2)
    stat = 2.0 * (ll_unrestricted - ll_restricted)
    p = float(chi2.sf(max(stat, 0.0), df))
    return float(stat), p


# (label, equation, role, relation); relation None means unsigned
SIGN_PREDICTIONS = (
    ("beta_Y > 0", "frontier", "income", ">"),
    ("beta_P < 0", "frontier", "price", "<"),
    ("beta_Eff < 0", "frontier", "policy", "<"),
    ("gamma_Eff <= 0", "inefficiency", "policy", "<="),
    ("gamma_P <= 0", "inefficiency", "price", "<="),
    ("gamma_Y (ambiguous)", "inefficiency", "income", None),
)


def check_sign_predictions(fit, price="price", income="gdp_pc", policy="eff"):
    """Evaluate the six sign predictions; returns a list of dicts.

    ``verdict`` is ``pass``/``fail`` for the signed predictions and
    ``ambiguous`` for the income coefficient of the inefficiency equation.
    """
    names = {"price": price, "income": income, "policy": policy}
    report = []
    for label, eq, role, rel in SIGN_PREDICTIONS:
        col = names[role]
        pool = fit.beta_names if eq == "frontier" else fit.gamma_names
        if col not in pool:
            raise KeyError(f"column {col!r} is not in the {eq} equation")
        est = fit.beta(col) if eq == "frontier" else fit.gamma(col)
        se = fit.se_of(col, eq)
        if rel is None:
            verdict = "ambiguous"
        else:
            ok = {">": est > 0, "<": est < 0, "<=": est <= 0}[rel]
            verdict = "pass" if ok else "fail"
        z = est / se if se else None
        report.append({
            "prediction": label,
            "equation": eq,
            "column": col,
            "estimate": est,
            "se": se,
            "z": z,
            "p_value": None if z is None else float(chi2.sf(z * z, 1)),
            "sign": "positive" if est > 0 else ("negative" if est < 0 else "zero"),
            "verdict": verdict,
        })
    return report
