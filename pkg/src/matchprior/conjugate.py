"""Exact posterior quantiles and coverages for the normal family under
sigma-power priors pi proportional to sigma^k.

These closed forms equal the quadrature-oracle values (same posterior,
integrated analytically) and back the fast vectorized paths of the
experiment harness; the agreement is asserted in the test suite.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import ConfigError


def _stats(y):
    y = np.asarray(y, dtype=float)
    ybar = y.mean(axis=-1)
    s2 = ((y - ybar[..., None]) ** 2).mean(axis=-1)
    return ybar, np.sqrt(s2), y.shape[-1]


def posterior_dof(n: int, k: int) -> int:
    nu = n - k - 2
    if nu < 1:
        raise ConfigError(f"posterior degrees of freedom {nu} < 1 "
                          f"(n={n}, prior exponent k={k})")
    return nu


def normal_quantile(y, k: int, interest: str, prob: float):
    """Posterior prob-quantile of the interest parameter; vectorized over
    leading axes of y."""
    ybar, s_t, n = _stats(y)
    nu = posterior_dof(n, k)
    if interest == "loc":
        return ybar + stats.t.ppf(prob, nu) * s_t / np.sqrt(nu)
    if interest == "scale":
        return s_t * np.sqrt(n / stats.chi2.ppf(1.0 - prob, nu))
    raise ValueError(f"unknown interest {interest!r}")


def normal_coverage(n: int, k: int, interest: str, alpha: float) -> float:
    """Exact frequentist coverage of the upper 1-alpha posterior quantile."""
    nu = posterior_dof(n, k)
    if interest == "loc":
        t_val = stats.t.ppf(1.0 - alpha, nu) * np.sqrt((n - 1.0) / nu)
        return float(stats.t.cdf(t_val, n - 1))
    if interest == "scale":
        return float(1.0 - stats.chi2.cdf(stats.chi2.ppf(alpha, nu), n - 1))
    raise ValueError(f"unknown interest {interest!r}")


def sigma_power_exponent(prior_label: str):
    """Exponent k for sigma-power priors, None for anything else."""
    return {"flat": 0, "1/sigma": -1, "1/sigma^2": -2}.get(prior_label)
