"""Synthetic panels with known truth, and brute-force reference oracles.

Random draws use NumPy's ``PCG64`` bit generator seeded directly with the
configured integer seed, consumed in a fixed order (covariates unit by unit,
then noise, then inefficiency), so a seed always yields the same panel for a
given NumPy release.

The oracles here deliberately avoid the closed forms they check:
:func:`bc_oracle` integrates the joint density of ``(u, v)`` numerically,
:func:`lmg_oracle` walks every ordering of the regressors with
``numpy.linalg.lstsq``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
import pandas as pd
from scipy import integrate, optimize

from .exceptions import NumericalError
from .panel import ColumnSpec, Panel, TransformPlan

STATE_CODES = (
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA",
    "ID", "IL", "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS",
    "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA",
    "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
)


@dataclass(frozen=True)
class Covariate:
    """Covariate law on the transformed scale: ``mean + a_i + d_it``.

    ``a_i ~ N(0, between_sd^2)`` is a persistent unit level and ``d_it`` a
    stationary AR(1) deviation with marginal sd ``within_sd``. Log covariates
    are exponentiated to produce the raw column; level covariates are
    clipped below at ``lower``.
    """

    mean: float
    between_sd: float
    within_sd: float
    transform: str = "log"
    lower: float | None = None


def _default_covariates():
    return {
        "price": Covariate(np.log(20.0), 0.20, 0.06, "log"),
        "gdp_pc": Covariate(np.log(58.0), 0.22, 0.03, "log"),
        "eff": Covariate(18.0, 8.0, 2.5, "level", lower=0.0),
        "hdd": Covariate(5.1, 2.2, 0.4, "level", lower=0.0),
        "cdd": Covariate(1.2, 0.9, 0.2, "level", lower=0.0),
    }


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process for a frontier panel.

    Slopes in ``beta`` and ``gamma`` apply to covariates measured as
    deviations from their law means, so ``beta0`` / ``gamma0`` are the
    frontier and log-variance at the mean covariate vector.
    """

    n_units: int = 51
    n_years: int = 17
    first_year: int = 2006
    beta0: float = 5.536
    beta: Mapping[str, float] = field(default_factory=lambda: {
        "price": -0.97, "gdp_pc": 0.31, "eff": -0.0019, "hdd": 0.0465, "cdd": 0.1249})
    gamma0: float = -3.98
    gamma: Mapping[str, float] = field(default_factory=lambda: {
        "eff": -0.16, "price": 0.73, "gdp_pc": 3.61})
    sigma_v: float = 0.066
    covariates: Mapping[str, Covariate] = field(default_factory=_default_covariates)
    rho: float = 0.7
    year_trend: float = -0.006
    seed: int = 0

    def __post_init__(self):
        if self.n_years < 2 or self.n_units < 3:
            raise ValueError("need n_years >= 2 and n_units >= 3")
        unknown = (set(self.beta) | set(self.gamma)) - set(self.covariates)
        if unknown:
            raise ValueError(f"coefficients for undeclared covariates: {sorted(unknown)}")

    @property
    def units(self) -> list[str]:
        if self.n_units == len(STATE_CODES):
            return list(STATE_CODES)
        width = len(str(self.n_units))
        return [f"U{i:0{width}d}" for i in range(1, self.n_units + 1)]

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.first_year + self.n_years))

    def plan(self, response="energy_pc") -> TransformPlan:
        """Transform plan matching the generated columns."""
        cols = [ColumnSpec(response, "log", "none", ("response",))]
        for name, law in self.covariates.items():
            roles = []
            if name in self.beta:
                roles.append("frontier")
            if name in self.gamma:
                roles.append("inefficiency")
            cols.append(ColumnSpec(name, law.transform, "pooled-mean", tuple(roles)))
        return TransformPlan(tuple(cols))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariates"] = {k: asdict(v) for k, v in self.covariates.items()}
        d["beta"] = dict(self.beta)
        d["gamma"] = dict(self.gamma)
        return d


def generate_dgp(cfg: DgpConfig):
    """Draw a panel; returns ``(Panel, truth)``.

    ``truth`` holds the coefficients plus per-row arrays ``frontier``,
    ``u``, ``v`` and ``sigma_u`` aligned with the panel's row order
    (sorted by unit, then year).
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    G, T = cfg.n_units, cfg.n_years
    units, years = cfg.units, np.array(cfg.years)
    unit_col = np.repeat(np.array(units, dtype=object), T)
    year_col = np.tile(years, G)
    n = G * T

    x = {}
    innov = math.sqrt(1.0 - cfg.rho**2)
    for name, law in cfg.covariates.items():
        level = rng.standard_normal(G) * law.between_sd
        e = rng.standard_normal((G, T))
        d = np.empty((G, T))
        d[:, 0] = e[:, 0]
        for t in range(1, T):
            d[:, t] = cfg.rho * d[:, t - 1] + innov * e[:, t]
        vals = (law.mean + level[:, None] + law.within_sd * d).ravel()
        if law.transform == "level" and law.lower is not None:
            vals = np.maximum(vals, law.lower)
        x[name] = vals

    lam = cfg.year_trend * (year_col - years[0])
    frontier = cfg.beta0 + lam
    for name, b in cfg.beta.items():
        frontier = frontier + b * (x[name] - cfg.covariates[name].mean)
    ln_su2 = np.full(n, cfg.gamma0, dtype=np.float64)
    for name, g in cfg.gamma.items():
        ln_su2 = ln_su2 + g * (x[name] - cfg.covariates[name].mean)
    with np.errstate(under="ignore"):
        sigma_u = np.exp(0.5 * ln_su2)

    v = cfg.sigma_v * rng.standard_normal(n)
    u = np.abs(sigma_u * rng.standard_normal(n))
    lnq = frontier + v + u

    data = {"state": unit_col, "year": year_col, "energy_pc": np.exp(lnq)}
    for name, law in cfg.covariates.items():
        data[name] = np.exp(x[name]) if law.transform == "log" else x[name]
    panel = Panel(pd.DataFrame(data))
    truth = {
        "beta0": cfg.beta0,
        "beta": dict(cfg.beta),
        "gamma0": cfg.gamma0,
        "gamma": dict(cfg.gamma),
        "sigma_v": cfg.sigma_v,
        "year_effects": {int(t): float(cfg.year_trend * (t - years[0])) for t in years},
        "frontier": frontier,
        "u": u,
        "v": v,
        "sigma_u": sigma_u,
        "ln_q": lnq,
    }
    return panel, truth


def truth_to_json(truth) -> dict:
    out = {}
    for k, v in truth.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


# --------------------------------------------------------------------------
# oracles


def bc_oracle(eps, sigma_u, sigma_v, rtol=1e-12):
    """``(E[u | eps], E[exp(-u) | eps])`` by adaptive quadrature.

    Integrates ``f_u(u) f_v(eps - u)`` over ``u >= 0`` with a half-normal
    ``f_u`` and normal ``f_v``; the normalising constant is integrated too.
    """
    eps, su, sv = float(eps), float(sigma_u), float(sigma_v)
    if su <= 0 or su < 1e-300:
        return 0.0, 1.0
    if sv <= 0:
        raise ValueError("sigma_v must be positive")

    def g(u):
        return -0.5 * (u / su) ** 2 - 0.5 * ((eps - u) / sv) ** 2

    width = min(su, sv)
    hi0 = max(abs(eps), 0.0) + 50.0 * max(su, sv)
    opt = optimize.minimize_scalar(lambda u: -g(u), bounds=(0.0, hi0), method="bounded",
                                   options={"xatol": 1e-14 * max(1.0, hi0)})
    mode = float(opt.x)
    g0 = g(mode)
    lo, hi = max(0.0, mode - 40.0 * width), mode + 40.0 * width
    points = [mode] if lo < mode < hi else None

    def integral(h):
        val, err = integrate.quad(lambda u: h(u) * math.exp(g(u) - g0), lo, hi, points=points,
                                  epsabs=0.0, epsrel=rtol, limit=500)
        if not np.isfinite(val):
            raise NumericalError("quadrature failed")
        return val

    mass = integral(lambda u: 1.0)
    mean_u = integral(lambda u: u) / mass
    mean_e = integral(lambda u: math.exp(-u)) / mass
    return mean_u, mean_e


def _r2_lstsq(X, y):
    if X.shape[1] == 0:
        return 0.0
    A = np.column_stack([np.ones(len(y)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    yc = y - y.mean()
    return 1.0 - float(resid @ resid) / float(yc @ yc)


def lmg_oracle(X, y):
    """Average sequential R² gain of each regressor over all p! orderings."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    if p > 6:
        raise ValueError("lmg_oracle enumerates p! orderings; p must be <= 6")
    shares = np.zeros(p)
    perms = list(itertools.permutations(range(p)))
    for order in perms:
        prev = 0.0
        for k in range(p):
            cur = _r2_lstsq(X[:, list(order[: k + 1])], y)
            shares[order[k]] += cur - prev
            prev = cur
    return shares / len(perms)


def numeric_gradient(f: Callable[[np.ndarray], float], theta, rel_step=1e-6):
    """Central differences with per-coordinate step ``rel_step * max(1, |theta_j|)``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp, fm = f(tp), f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value around coordinate {j}")
        g[j] = (fp - fm) / (2.0 * h)
    return g
