"""Maximum-likelihood estimation of the heteroskedastic half-normal frontier."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import as_1d, as_2d, check_same_length
from ..exceptions import ConvergenceError, LikelihoodError, NumericalError
from ..regress import ols_fit
from .likelihood import SfaParams, loglik, loglik_value
from .scores import battese_coelli, jlms

log = logging.getLogger(__name__)

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class WrongSkewWarning(UserWarning):
    """OLS residuals are skewed opposite to an input frontier."""


def numeric_hessian(grad_fn, theta, rel_step=1e-5):
    """Central differences of an analytic gradient, symmetrised."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    H = np.empty((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        H[:, j] = (grad_fn(tp) - grad_fn(tm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def starting_values(y, X, Z, names=None):
    """OLS slopes plus moment-based variance starts.

    Returns ``(theta0, wrong_skew)``. The intercept (column 0 of ``X``) is
    shifted down by the implied mean of the inefficiency term. The noise
    variance start is floored at ``0.05 m2``; starts closer to zero can trap
    the search on the ``sigma_v -> 0`` ridge.
    """
    ols = ols_fit(X, y, names=names)
    e = ols.residuals - ols.residuals.mean()
    m2 = float(np.mean(e**2))
    m3 = float(np.mean(e**3))
    beta = ols.coef.copy()
    wrong_skew = m3 <= 0
    c3 = SQRT_2_OVER_PI * (4.0 / np.pi - 1.0)
    su2 = sv2 = None
    if not wrong_skew:
        su = (m3 / c3) ** (1.0 / 3.0)
        sv2_mom = m2 - (1.0 - 2.0 / np.pi) * su**2
        if sv2_mom > 0:
            su2, sv2 = su**2, max(sv2_mom, 0.05 * m2)
            beta[0] -= su * SQRT_2_OVER_PI
    if su2 is None:
        su2 = sv2 = 0.5 * m2
    gamma = np.zeros(Z.shape[1])
    gamma[0] = np.log(su2)
    return np.concatenate([beta, [np.log(sv2)], gamma]), wrong_skew


@dataclass
class OptimResult:
    theta: np.ndarray
    loglik: float
    grad: np.ndarray
    hessian: np.ndarray | None
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)


def maximize_loglik(theta0, y, X, Z, *, max_iter=500, gtol=1e-6, ftol=1e-10, seed=0):
    """BFGS on the negative log-likelihood followed by Newton refinement.

    Converged means ``max|grad| < gtol`` and a relative change in the
    log-likelihood below ``ftol`` over the last iteration. On failure the
    search restarts once from a perturbed start.
    """
    trace = []

    def neg(th):
        try:
            ll, g = loglik(th, y, X, Z)
        except LikelihoodError:
            return np.inf, np.full_like(th, np.nan)
        if not np.all(np.isfinite(g)):
            return np.inf, np.full_like(th, np.nan)
        return -ll, -g

    def grad(th):
        return loglik(th, y, X, Z, check=False)[1]

    def attempt(start, budget):
        hist = []

        def cb(intermediate_result):
            hist.append(-float(intermediate_result.fun))

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            res = minimize(neg, start, jac=True, method="BFGS", callback=cb,
                           options={"gtol": gtol, "maxiter": budget, "norm": np.inf})
        theta = res.x
        n_iter = int(res.nit)
        ll, g = loglik(theta, y, X, Z)
        trace.append({"stage": "bfgs", "iterations": n_iter, "loglik": ll,
                      "grad_inf": float(np.max(np.abs(g))), "message": str(res.message)})
        prev = hist[-2] if len(hist) >= 2 else None
        H = None
        # Newton refinement with backtracking
        for _ in range(50):
            gmax = float(np.max(np.abs(g)))
            rel = np.inf if prev is None else abs(ll - prev) / max(1.0, abs(ll))
            if gmax < gtol and rel < ftol:
                return theta, ll, g, H, n_iter, True
            if n_iter >= budget:
                break
            H = numeric_hessian(grad, theta)
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                step = None
            if step is None or not np.all(np.isfinite(step)) or g @ step <= 0:
                step = g / max(1.0, float(np.linalg.norm(g)))
            # differences below this are summation noise at the optimum
            noise = 0.1 * ftol * max(1.0, abs(ll))
            t, improved = 1.0, False
            while t > 1e-12:
                cand = theta + t * step
                try:
                    ll_c = loglik_value(cand, y, X, Z)
                except LikelihoodError:
                    ll_c = -np.inf
                if ll_c >= ll - noise:
                    improved = True
                    break
                t *= 0.5
            n_iter += 1
            if not improved:
                trace.append({"stage": "newton", "iterations": n_iter, "loglik": ll,
                              "grad_inf": gmax, "message": "line search failed"})
                break
            prev, theta = ll, cand
            ll, g = loglik(theta, y, X, Z)
            H = None
        trace.append({"stage": "newton", "iterations": n_iter, "loglik": ll,
                      "grad_inf": float(np.max(np.abs(g))), "message": "not converged"})
        return theta, ll, g, H, n_iter, False

    theta, ll, g, H, n_iter, ok = attempt(np.asarray(theta0, float), max_iter)
    total = n_iter
    if not ok and total < max_iter:
        rng = np.random.default_rng(seed)
        start = theta + 0.01 * rng.standard_normal(theta.size)
        theta2, ll2, g2, H2, n2, ok = attempt(start, max_iter - total)
        total += n2
        if ok or ll2 > ll:
            theta, ll, g, H = theta2, ll2, g2, H2
    return OptimResult(theta, ll, g, H, total, ok, trace)


class StochasticFrontier(RegressorMixin, BaseEstimator):
    """Input-oriented stochastic frontier with heteroskedastic half-normal inefficiency.

    ``ln q = X beta + v + u`` with ``v ~ N(0, sigma_v^2)``,
    ``u ~ N+(0, sigma_u^2)`` and ``ln sigma_u^2 = Z gamma``. An intercept is
    added to both ``X`` and ``Z``.

    Parameters
    ----------
    max_iter : int
        Iteration budget shared by the quasi-Newton search, Newton
        refinement and the single restart.
    gtol : float
        Convergence threshold on the infinity norm of the score.
    ftol : float
        Convergence threshold on the relative log-likelihood change.
    compute_covariance : bool
        Invert the numerical Hessian at the optimum. Disable for bootstrap
        replicates where standard errors are not needed.
    random_state : int
        Seed for the perturbed restart.
    """

    def __init__(self, max_iter=500, gtol=1e-6, ftol=1e-10, compute_covariance=True, random_state=0):
        self.max_iter = max_iter
        self.gtol = gtol
        self.ftol = ftol
        self.compute_covariance = compute_covariance
        self.random_state = random_state

    def fit(self, X, y, Z=None, init=None):
        X, xnames = as_2d(X, "X")
        y = as_1d(y)
        if Z is None or np.shape(Z)[1] == 0:
            Z = np.zeros((len(y), 0))
            znames = []
        else:
            Z, znames = as_2d(Z, "Z")
        check_same_length(X, y, Z, names=["X", "y", "Z"])
        Xc = np.hstack([np.ones((len(y), 1)), X])
        Zc = np.hstack([np.ones((len(y), 1)), Z])
        self.feature_names_ = ["const"] + xnames
        self.inefficiency_names_ = ["const"] + znames
        self.warnings_ = []

        theta0, wrong_skew = starting_values(y, Xc, Zc, names=self.feature_names_)
        if wrong_skew:
            msg = "OLS residuals have non-positive skewness; the inefficiency variance may collapse to zero"
            warnings.warn(msg, WrongSkewWarning, stacklevel=2)
            self.warnings_.append(msg)
        if init is not None:
            theta0 = init.to_vector() if isinstance(init, SfaParams) else np.asarray(init, float)
            if theta0.size != Xc.shape[1] + 1 + Zc.shape[1]:
                raise ValueError("init has the wrong number of parameters")
        res = maximize_loglik(theta0, y, Xc, Zc, max_iter=self.max_iter, gtol=self.gtol,
                              ftol=self.ftol, seed=self.random_state)
        self.trace_ = res.trace
        self.n_iter_ = res.n_iter
        if not res.converged:
            raise ConvergenceError(
                f"maximum likelihood did not converge in {res.n_iter} iterations "
                f"(max|grad| = {np.max(np.abs(res.grad)):.3g})",
                trace=res.trace,
            )
        k = Xc.shape[1]
        self.params_ = SfaParams.from_vector(res.theta, k)
        self.coef_ = self.params_.beta
        self.intercept_ = float(self.coef_[0])
        self.gamma_ = self.params_.gamma
        self.ln_sigma_v2_ = self.params_.ln_sigma_v2
        self.sigma_v_ = self.params_.sigma_v
        self.loglik_ = res.loglik
        self.grad_inf_ = float(np.max(np.abs(res.grad)))
        self.covariance_ = None
        self.hessian_singular_ = False
        if self.compute_covariance:
            H = res.hessian
            if H is None:
                H = numeric_hessian(lambda th: loglik(th, y, Xc, Zc, check=False)[1], res.theta)
            self.covariance_ = _invert_information(-H)
            self.hessian_singular_ = self.covariance_ is None
            if self.hessian_singular_:
                msg = "Hessian is singular at the optimum; covariance unavailable"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                self.warnings_.append(msg)
        return self

    # -- predictions -------------------------------------------------------

    def _design(self, X, Z=None):
        check_is_fitted(self, "coef_")
        X, _ = as_2d(X, "X")
        Xc = np.hstack([np.ones((X.shape[0], 1)), X])
        if Z is None or np.shape(Z)[1] == 0:
            Zc = np.ones((X.shape[0], 1))
        else:
            Z, _ = as_2d(Z, "Z")
            Zc = np.hstack([np.ones((Z.shape[0], 1)), Z])
        return Xc, Zc

    def predict(self, X):
        """Fitted frontier ``X beta`` (log scale)."""
        Xc, _ = self._design(X)
        return Xc @ self.coef_

    def sigma_u(self, Z=None, n=None):
        check_is_fitted(self, "coef_")
        if Z is not None and np.shape(Z)[1] == 0:
            n, Z = np.shape(Z)[0], None
        if Z is None:
            return np.full(n or 1, np.exp(0.5 * self.gamma_[0]))
        Z, _ = as_2d(Z, "Z")
        Zc = np.hstack([np.ones((Z.shape[0], 1)), Z])
        return np.exp(0.5 * (Zc @ self.gamma_))

    def inefficiency(self, X, y, Z=None):
        """JLMS conditional mean E[u | eps]."""
        eps = as_1d(y) - self.predict(X)
        return jlms(eps, self.sigma_u(Z, n=len(eps)), self.sigma_v_)

    def efficiency(self, X, y, Z=None):
        """Battese-Coelli E[exp(-u) | eps]."""
        eps = as_1d(y) - self.predict(X)
        return battese_coelli(eps, self.sigma_u(Z, n=len(eps)), self.sigma_v_)

    @property
    def standard_errors_(self):
        check_is_fitted(self, "coef_")
        if self.covariance_ is None:
            return None
        return np.sqrt(np.diag(self.covariance_))


def _invert_information(info, cond_max=1e13):
    if not np.all(np.isfinite(info)):
        return None
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    ev = np.linalg.eigvalsh(info)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_max:
        return None
    return np.linalg.inv(info)


# --------------------------------------------------------------------------
# design-matrix level interface


@dataclass(frozen=True)
class SfaSpec:
    """Which design-matrix columns enter each equation (``None`` = all)."""

    frontier: Sequence[str] | None = None
    inefficiency: Sequence[str] | None = None
    mundlak: bool = False
    year_effects: bool = True


@dataclass
class SfaFit:
    params: SfaParams
    beta_names: list
    gamma_names: list
    covariance: np.ndarray | None
    loglik: float
    frontier: np.ndarray
    residuals: np.ndarray
    sigma_u: np.ndarray
    jlms: np.ndarray
    efficiency: np.ndarray
    n_iter: int
    grad_inf: float
    unit_ids: np.ndarray
    year_ids: np.ndarray
    Z: np.ndarray
    trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    spec: SfaSpec | None = None

    @property
    def n_obs(self) -> int:
        return len(self.frontier)

    @property
    def y(self) -> np.ndarray:
        return self.frontier + self.residuals

    @property
    def sigma_v(self) -> float:
        return self.params.sigma_v

    @property
    def covariance_available(self) -> bool:
        return self.covariance is not None

    @property
    def names(self) -> list:
        return list(self.beta_names) + ["ln_sigma_v2"] + [f"ineff:{n}" for n in self.gamma_names]

    @property
    def se(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))

    def beta(self, name) -> float:
        return float(self.params.beta[self.beta_names.index(name)])

    def gamma(self, name) -> float:
        return float(self.params.gamma[self.gamma_names.index(name)])

    def se_of(self, name, equation="frontier"):
        if self.covariance is None:
            return None
        k = len(self.beta_names)
        idx = self.beta_names.index(name) if equation == "frontier" else k + 1 + self.gamma_names.index(name)
        return float(np.sqrt(self.covariance[idx, idx]))

    @property
    def sigma_u_at_mean(self) -> float:
        """sigma_u evaluated at the sample mean of Z."""
        return float(np.exp(0.5 * self.Z.mean(axis=0) @ self.params.gamma))

    @property
    def lambda_(self) -> float:
        return self.sigma_u_at_mean / self.sigma_v

    @property
    def mean_sigma_u(self) -> float:
        return float(np.mean(self.sigma_u))

    @property
    def mean_expected_u(self) -> float:
        """Cross-observation mean of sigma_u * sqrt(2/pi)."""
        return float(np.mean(self.sigma_u * SQRT_2_OVER_PI))

    @property
    def expected_u_at_mean(self) -> float:
        return self.sigma_u_at_mean * SQRT_2_OVER_PI

    def diagnostics(self) -> dict:
        return {
            "n_obs": self.n_obs,
            "loglik": self.loglik,
            "sigma_v": self.sigma_v,
            "sigma_u_at_mean_z": self.sigma_u_at_mean,
            "expected_u_at_mean_z": self.expected_u_at_mean,
            "mean_sigma_u": self.mean_sigma_u,
            "mean_expected_u": self.mean_expected_u,
            "mean_jlms": float(np.mean(self.jlms)),
            "lambda": self.lambda_,
            "mean_efficiency": float(np.mean(self.efficiency)),
            "iterations": self.n_iter,
            "grad_inf": self.grad_inf,
            "covariance_available": self.covariance_available,
        }


def design_arrays(dm, spec: SfaSpec):
    from ..panel import mundlak_augment

    if spec.mundlak:
        dm = mundlak_augment(dm)
    frontier = list(spec.frontier) if spec.frontier is not None else [c for c in dm.X.columns if c not in dm.mundlak_columns]
    if spec.mundlak:
        frontier += [c for c in dm.mundlak_columns if dm.meta[c].get("source") in frontier]
    for c in frontier:
        if c not in dm.X.columns:
            raise KeyError(f"frontier column {c!r} not in design matrix")
    X = dm.X[frontier].to_numpy(dtype=np.float64)
    xnames = list(frontier)
    if spec.year_effects and dm.D.shape[1]:
        X = np.hstack([X, dm.D.to_numpy(dtype=np.float64)])
        xnames += list(dm.D.columns)
    ineff = list(spec.inefficiency) if spec.inefficiency is not None else list(dm.Z.columns)
    Z = dm.Z[ineff].to_numpy(dtype=np.float64) if ineff else np.zeros((dm.n_obs, 0))
    return dm, X, xnames, Z, ineff


def fit_mle(dm, spec: SfaSpec | None = None, init: SfaParams | None = None, **opts) -> SfaFit:
    """Fit the frontier on a :class:`~energyfrontier.panel.DesignMatrix`.

    ``opts`` are forwarded to :class:`StochasticFrontier`.
    """
    spec = spec or SfaSpec()
    dm2, X, xnames, Z, znames = design_arrays(dm, spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = StochasticFrontier(**opts).fit(
            _frame(X, xnames), dm2.y, _frame(Z, znames), init=init
        )
    for w in caught:
        if not issubclass(w.category, (WrongSkewWarning, RuntimeWarning)):
            warnings.warn(w.message, w.category, stacklevel=2)
    return fit_from_estimator(est, X, dm2.y, Z, dm2.unit_ids, dm2.year_ids, spec)


def fit_from_estimator(est: StochasticFrontier, X, y, Z, unit_ids, year_ids, spec=None) -> SfaFit:
    frontier = est.predict(X)
    su = est.sigma_u(Z if Z.shape[1] else None, n=len(y))
    eps = y - frontier
    Zc = np.hstack([np.ones((len(y), 1)), Z])
    return SfaFit(
        params=est.params_,
        beta_names=list(est.feature_names_),
        gamma_names=list(est.inefficiency_names_),
        covariance=est.covariance_,
        loglik=est.loglik_,
        frontier=frontier,
        residuals=eps,
        sigma_u=su,
        jlms=jlms(eps, su, est.sigma_v_),
        efficiency=battese_coelli(eps, su, est.sigma_v_),
        n_iter=est.n_iter_,
        grad_inf=est.grad_inf_,
        unit_ids=np.asarray(unit_ids),
        year_ids=np.asarray(year_ids),
        Z=Zc,
        trace=est.trace_,
        warnings=list(est.warnings_),
        spec=spec,
    )


def _frame(A, names):
    import pandas as pd

    return pd.DataFrame(A, columns=list(names))


def jlms_scores(fit: SfaFit) -> np.ndarray:
    return jlms(fit.residuals, fit.sigma_u, fit.sigma_v)


def bc_efficiency(fit: SfaFit) -> np.ndarray:
    return battese_coelli(fit.residuals, fit.sigma_u, fit.sigma_v)


__all__ = [
    "StochasticFrontier",
    "SfaSpec",
    "SfaFit",
    "SfaParams",
    "fit_mle",
    "jlms_scores",
    "bc_efficiency",
    "maximize_loglik",
    "starting_values",
    "numeric_hessian",
    "NumericalError",
    "WrongSkewWarning",
]
