"""Normal / heteroskedastic half-normal log-likelihood for an input frontier.

The composite error is ``eps = y - X @ beta = v + u`` with
``v ~ N(0, sigma_v^2)`` and ``u ~ N+(0, sigma_u_i^2)``,
``ln sigma_u_i^2 = Z_i @ gamma``. Inefficiency raises observed use, so the
skewness term enters as ``ln Phi(+eps * lambda / sigma)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from ..exceptions import LikelihoodError

LN2 = np.log(2.0)
HALF_LN_2PI = 0.5 * np.log(2.0 * np.pi)


def log_phi(z):
    return -0.5 * z * z - HALF_LN_2PI


def mills(z):
    """phi(z) / Phi(z), stable for large negative ``z``."""
    return np.exp(log_phi(z) - log_ndtr(z))


@dataclass(frozen=True)
class SfaParams:
    beta: np.ndarray
    ln_sigma_v2: float
    gamma: np.ndarray

    @property
    def sigma_v(self) -> float:
        return float(np.exp(0.5 * self.ln_sigma_v2))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.beta, float), [float(self.ln_sigma_v2)], np.asarray(self.gamma, float)])

    @classmethod
    def from_vector(cls, theta, k) -> "SfaParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:k].copy(), float(theta[k]), theta[k + 1 :].copy())


def loglik_terms(theta, y, X, Z):
    """Per-observation log-likelihood contributions and their pieces."""
    k = X.shape[1]
    beta, s, gamma = theta[:k], theta[k], theta[k + 1 :]
    eps = y - X @ beta
    sv2 = np.exp(s)
    su2 = np.exp(Z @ gamma)
    sig2 = sv2 + su2
    sig = np.sqrt(sig2)
    a = eps * np.sqrt(su2 / (sv2 * sig2))
    ll = LN2 - 0.5 * np.log(sig2) - HALF_LN_2PI - 0.5 * eps * eps / sig2 + log_ndtr(a)
    return ll, eps, sv2, su2, sig2, a


def _check_finite(ll):
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise LikelihoodError(int(bad[0]))


def loglik_value(theta, y, X, Z, check=True) -> float:
    ll = loglik_terms(theta, y, X, Z)[0]
    if check:
        _check_finite(ll)
    return float(np.sum(ll))


def loglik(theta, y, X, Z, check=True):
    """Total log-likelihood and its analytic gradient in ``(beta, ln sigma_v^2, gamma)``."""
    theta = np.asarray(theta, dtype=np.float64)
    ll, eps, sv2, su2, sig2, a = loglik_terms(theta, y, X, Z)
    if check:
        _check_finite(ll)
    r = mills(a)
    # a = eps * sqrt(B / (A (A + B))) with A = sigma_v^2, B = sigma_u^2
    lam_over_sig = np.sqrt(su2 / (sv2 * sig2))
    dl_deps = -eps / sig2 + r * lam_over_sig
    dl_dsig2 = -0.5 / sig2 + 0.5 * eps * eps / (sig2 * sig2)
    dl_dA = dl_dsig2 + r * a * 0.5 * (-1.0 / sv2 - 1.0 / sig2)
    dl_dB = dl_dsig2 + r * a * 0.5 * (1.0 / su2 - 1.0 / sig2)
    g_beta = -(X.T @ dl_deps)
    g_s = np.sum(sv2 * dl_dA)
    g_gamma = Z.T @ (su2 * dl_dB)
    grad = np.concatenate([g_beta, [g_s], g_gamma])
    return float(np.sum(ll)), grad


def loglik_params(params: SfaParams, dm, frontier=None, inefficiency=None, year_effects=True):
    """Evaluate :func:`loglik` directly on an :class:`SfaParams` and a design matrix."""
    X, _ = dm.frontier_matrix(frontier, year_effects=year_effects)
    Z, _ = dm.inefficiency_matrix(inefficiency)
    return loglik(params.to_vector(), dm.y, X, Z)
