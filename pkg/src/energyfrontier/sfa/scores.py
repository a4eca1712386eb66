"""Conditional inefficiency and efficiency scores.

For an input frontier (``eps = v + u``) the posterior of ``u`` given
``eps`` is a normal with mean ``mu* = eps sigma_u^2 / sigma^2`` and standard
deviation ``sigma* = sigma_u sigma_v / sigma``, truncated at zero.
"""

import numpy as np
from scipy.special import log_ndtr

from .likelihood import mills


def posterior_moments(eps, sigma_u, sigma_v):
    eps = np.asarray(eps, dtype=np.float64)
    su2 = np.asarray(sigma_u, dtype=np.float64) ** 2
    sv2 = np.asarray(sigma_v, dtype=np.float64) ** 2
    sig2 = su2 + sv2
    mu_star = eps * su2 / sig2
    sigma_star = np.sqrt(su2 * sv2 / sig2)
    return mu_star, sigma_star


def jlms(eps, sigma_u, sigma_v):
    """E[u | eps] = mu* + sigma* phi(mu*/sigma*) / Phi(mu*/sigma*)."""
    mu, s = posterior_moments(eps, sigma_u, sigma_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, mu / np.where(s > 0, s, 1.0), 0.0)
    out = np.where(s > 0, mu + s * mills(z), 0.0)
    return out


def battese_coelli(eps, sigma_u, sigma_v):
    """E[exp(-u) | eps] = exp(-mu* + sigma*^2/2) Phi(mu*/sigma* - sigma*) / Phi(mu*/sigma*)."""
    mu, s = posterior_moments(eps, sigma_u, sigma_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, mu / np.where(s > 0, s, 1.0), 0.0)
    log_e = -mu + 0.5 * s * s + log_ndtr(z - s) - log_ndtr(z)
    return np.where(s > 0, np.minimum(np.exp(log_e), 1.0), 1.0)
