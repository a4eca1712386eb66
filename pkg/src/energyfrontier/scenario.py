"""Back-of-envelope policy scenarios built on fitted elasticities."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError


def scenario_price_convergence(p_current, p_target, beta_p):
    """Fractional reduction in use when prices move to ``p_target``: ``1 - (Pt/Pc)**beta_p``."""
    pc = np.asarray(p_current, dtype=np.float64)
    pt = np.asarray(p_target, dtype=np.float64)
    if np.any(pc <= 0) or np.any(pt <= 0):
        raise DataError("prices must be positive")
    out = 1.0 - (pt / pc) ** np.asarray(beta_p, dtype=np.float64)
    return float(out) if np.ndim(out) == 0 else out


def scenario_policy_gap(delta_points, beta_eff):
    """Reduction from raising the policy index by ``delta_points``.

    Returns ``(linear, exact)`` with ``linear = -beta_eff * delta`` and
    ``exact = 1 - exp(beta_eff * delta)``.
    """
    d = np.asarray(delta_points, dtype=np.float64)
    if np.any(d < 0):
        raise DataError("delta_points must be non-negative")
    b = np.asarray(beta_eff, dtype=np.float64)
    lin = -b * d
    exact = -np.expm1(b * d)
    if np.ndim(lin) == 0:
        return float(lin), float(exact)
    return lin, exact


def scenario_half_gap(expected_u):
    """Reduction from closing half the inefficiency gap: ``1 - exp(-E[u]/2)``."""
    u = np.asarray(expected_u, dtype=np.float64)
    if np.any(u < 0):
        raise DataError("expected inefficiency must be non-negative")
    out = -np.expm1(-0.5 * u)
    return float(out) if np.ndim(out) == 0 else out


def per_capita_amount(fraction, mean_use):
    """Convert a fractional reduction to units of ``mean_use``."""
    return fraction * mean_use
