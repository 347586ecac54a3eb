"""Laplace-expansion posterior quantities and the quadrature oracle.

The expansion side works from observed tensors at the MLE (``HatArrays``):
the posterior mean ``mu_B`` of the signed root, the second-moment
correction ``a_B``, and quantiles from inverting R(psi) = mu_B + z.  The
oracle side integrates the exact unnormalized posterior exp{L(theta)} *
pi(theta) on a mode-centered tensor-product Gauss-Legendre grid and
self-validates by node doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln, ndtri

from . import backend
from .errors import BracketError, CurvatureError, QuadratureError
from .families import prior_in_slots
from .likelihood import FitResult, fit_constrained, fit_mle, signed_root
from .tensors import HatArrays, hat_arrays

QUAD_NODES = 120
QUAD_HALF_WIDTH_SD = 10.0
SELF_CHECK_RTOL = 1e-6


@dataclass
class PosteriorSummary:
    mu_B: float | None
    a_B: float | None
    sigma2_B: float | None
    quantiles: dict
    method: str
    mean_R: float | None = None
    var_R: float | None = None

    def quantile(self, prob: float) -> float:
        key = round(float(prob), 12)
        if key not in self.quantiles:
            raise KeyError(f"quantile at prob={prob} was not computed")
        return self.quantiles[key]


# ---------------------------------------------------------------------------
# Laplace expansion pieces


def laplace_log_posterior(family, y, prior, psi,
                          fit: FitResult | None = None) -> float:
    """Unnormalized log marginal posterior B(psi) + M(psi) - M(psi_hat).

    B collects the nuisance-Hessian determinant ratio and the prior ratio
    between the constrained and unconstrained maximizers.
    """
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    pp = fit_constrained(family, y, psi, fit=fit)
    theta_c = fit.theta_hat.copy()
    theta_c[0] = psi
    theta_c[1:] = pp.phi_tilde
    block = family.loglik_derivs(theta_c, y, order=2)["L_rs"][1:, 1:]
    block_hat = family.loglik_derivs(fit.theta_hat, y, order=2)["L_rs"][1:, 1:]
    sign_c, logdet_c = np.linalg.slogdet(-block)
    sign_h, logdet_h = np.linalg.slogdet(-block_hat)
    if sign_c <= 0:
        raise CurvatureError(
            f"nuisance Hessian block not negative definite at psi={psi}")
    log_pi, _ = prior_in_slots(family, prior)
    b = -0.5 * (logdet_c - logdet_h) + log_pi(theta_c) - log_pi(fit.theta_hat)
    return float(b + pp.M - fit.loglik_at_hat)


def mu_B(hat: HatArrays) -> float:
    """Posterior mean of R(psi) to O(n^-3/2), from observed quantities."""
    if hat.log_pi_grad is None:
        raise ValueError("HatArrays carries no prior derivatives")
    a = hat.l_up_rs[:, 0]
    h = hat.h_hat
    t1 = -0.5 * h * np.einsum("rst,r,st->", hat.l_rst, a, hat.l_up_rs)
    t2 = -(h ** 3) / 6.0 * np.einsum("rst,r,s,t->", hat.l_rst, a, a, a)
    t3 = h * float(hat.log_pi_grad @ a)
    return float(t1 + t2 + t3)


def a_B(hat: HatArrays) -> float:
    """Posterior second-moment correction: E{R^2 | Y} = 1 + a_B + O(n^-3/2)."""
    if hat.pi_r is None or hat.pi_rs is None:
        raise ValueError("HatArrays carries no prior ratio terms")
    L = hat.l_up_rs
    V = hat.v_up_rs
    l3 = hat.l_rst
    l4 = hat.l_rstu
    t1 = 0.25 * (np.einsum("rs,tu,rstu->", L, L, l4)
                 - np.einsum("rs,tu,rstu->", V, V, l4))
    t2 = -0.25 * (np.einsum("ru,st,vw,rst,uvw->", L, L, L, l3, l3)
                  - np.einsum("ru,st,vw,rst,uvw->", V, V, V, l3, l3))
    t3 = -(1.0 / 6.0) * (np.einsum("ru,sw,tv,rst,uvw->", L, L, L, l3, l3)
                         - np.einsum("ru,sw,tv,rst,uvw->", V, V, V, l3, l3))
    t4 = (np.einsum("rs,tu,rst,u->", L, L, l3, hat.pi_r)
          - np.einsum("rs,tu,rst,u->", V, V, l3, hat.pi_r))
    t5 = -np.einsum("rs,rs->", L - V, hat.pi_rs)
    return float(t1 + t2 + t3 + t4 + t5)


def sigma2_B(hat: HatArrays) -> float:
    m = mu_B(hat)
    return 1.0 + a_B(hat) - m * m


def laplace_summary(family, y, prior, probs=(),
                    fit: FitResult | None = None) -> PosteriorSummary:
    """Expansion-side posterior summary with refined quantiles."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    hat = hat_arrays(family, y, fit.theta_hat, prior=prior)
    m = mu_B(hat)
    a = a_B(hat)
    qs = {round(float(p), 12): refined_quantile(family, y, prior, p,
                                                fit=fit, hat=hat)
          for p in probs}
    return PosteriorSummary(mu_B=m, a_B=a, sigma2_B=1.0 + a - m * m,
                            quantiles=qs, method="laplace-expansion")


def refined_quantile(family, y, prior, prob, fit: FitResult | None = None,
                     hat: HatArrays | None = None,
                     tol: float = 1e-9) -> float:
    """psi with posterior probability ``prob`` below it, via the N(0,1)
    approximation to R(psi) - mu_B: solves R(psi) = mu_B + z where
    Phi(z) = 1 - prob, by bisection on psi."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    if hat is None:
        hat = hat_arrays(family, y, fit.theta_hat, prior=prior)
    target = mu_B(hat) + float(ndtri(1.0 - prob))

    def g(psi):
        return signed_root(family, y, psi, fit=fit).R - target

    sd = math.sqrt(-hat.l_up_rs[0, 0])
    lo = hi = fit.psi_hat
    side = -1.0 if target > 0 else 1.0  # R decreasing in psi
    width = sd
    for _ in range(80):
        cand = fit.psi_hat + side * width
        theta_c = fit.theta_hat.copy()
        theta_c[0] = cand
        if not family.in_domain(theta_c):
            width *= 0.97
            continue
        if side < 0:
            lo = cand
        else:
            hi = cand
        val = g(cand)
        if (side < 0 and val > 0) or (side > 0 and val < 0):
            break
        width *= 1.8
    else:
        raise BracketError(f"could not bracket R(psi)={target}")
    if lo == hi:
        return float(fit.psi_hat)
    psi_l = bisect(g, lo, hi, xtol=1e-14 * max(1.0, abs(fit.psi_hat)),
                   rtol=8.882e-16, maxiter=200)
    if abs(g(psi_l)) > tol:
        raise BracketError(
            f"quantile inversion stalled: |R - target| = {abs(g(psi_l)):.2e}")
    return float(psi_l)


# ---------------------------------------------------------------------------
# quadrature oracle


def _gl_axis(lo, hi, k):
    x, w = np.polynomial.legendre.leggauss(k)
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid + rad * x, rad * w


def _axis_bounds(family, fit, hat, box_sd=QUAD_HALF_WIDTH_SD):
    sds = np.sqrt(np.diag(-hat.l_up_rs))
    bounds = []
    for r in range(fit.theta_hat.size):
        lo = fit.theta_hat[r] - box_sd * sds[r]
        hi = fit.theta_hat[r] + box_sd * sds[r]
        if r in family.positive_slots:
            lo = max(lo, 1e-3 * sds[r], 1e-10)
        bounds.append((lo, hi))
    return bounds


def _log_joint_grid(family, prior, psis, phis, y):
    """log{exp(L) * pi} on the slot-ordered tensor grid."""
    if hasattr(family, "code"):
        if family.interest == "loc":
            grid = backend.kernels.loglik_grid(family.code, y, psis, phis)
            mu_mesh, sig_mesh = psis[:, None], phis[None, :]
        else:
            grid = backend.kernels.loglik_grid(family.code, y, phis, psis).T
            mu_mesh, sig_mesh = phis[None, :], psis[:, None]
        logpi = np.broadcast_to(
            np.asarray(prior.log_pi([mu_mesh, sig_mesh]), dtype=float),
            grid.shape)
        return grid + logpi
    # gamma: L(a, b) = n(a log b - lnGamma(a)) + (a-1) T1 - b T2
    a_vals = psis if family.interest == "shape" else phis
    b_vals = phis if family.interest == "shape" else psis
    y = np.asarray(y, dtype=float)
    n = y.size
    t1 = float(np.log(y).sum())
    t2 = float(y.sum())
    A, B = a_vals[:, None], b_vals[None, :]
    grid = n * (A * np.log(B) - gammaln(A)) + (A - 1.0) * t1 - B * t2
    if family.interest != "shape":
        grid = grid.T
        A, B = A.T, B.T
    logpi = np.broadcast_to(np.asarray(prior.log_pi([A, B]), dtype=float),
                            grid.shape)
    return grid + logpi


def _profile_on(family, y, psis, fit):
    """M(psi) on an ascending grid (warm-started kernels for LS)."""
    if hasattr(family, "code"):
        mu_hat, s_hat = family.to_phys(fit.theta_hat)
        if family.interest == "loc":
            _, M, status = backend.kernels.profile_fixed_loc_many(
                family.code, y, psis, float(s_hat), 1e-11, 200)
        else:
            _, M, status = backend.kernels.profile_fixed_scale_many(
                family.code, y, psis, float(mu_hat), 1e-11, 200)
        return np.asarray(M)
    return np.array([fit_constrained(family, y, p, fit=fit).M for p in psis])


def _r_on_grid(family, y, psis, fit):
    M = _profile_on(family, y, psis, fit)
    diff = np.clip(fit.loglik_at_hat - M, 0.0, None)
    return np.sign(fit.psi_hat - psis) * np.sqrt(2.0 * diff)


class _QuadratureState:
    """One resolution level of the posterior quadrature."""

    def __init__(self, family, y, prior, fit, hat, nodes,
                 box_sd=QUAD_HALF_WIDTH_SD):
        self.family = family
        self.y = y
        self.prior = prior
        self.fit = fit
        bounds = _axis_bounds(family, fit, hat, box_sd=box_sd)
        if len(bounds) != 2:
            raise NotImplementedError(
                "quadrature oracle requires one nuisance parameter")
        (self.plo, self.phi_hi), (self.flo, self.fhi) = bounds[0], bounds[1]
        self.psis, self.wpsi = _gl_axis(*bounds[0], nodes)
        self.phis, self.wphi = _gl_axis(*bounds[1], nodes)
        logj = _log_joint_grid(family, prior, self.psis, self.phis, y)
        self.shift = float(logj.max())
        self.expj = np.exp(logj - self.shift)
        self.inner = self.expj @ self.wphi  # marginal mass density at psis
        self.Z = float(self.wpsi @ self.inner)
        self.nodes = nodes

    def moments_R(self):
        R = _r_on_grid(self.family, self.y, self.psis, self.fit)
        m1 = float(self.wpsi @ (R * self.inner)) / self.Z
        m2 = float(self.wpsi @ (R * R * self.inner)) / self.Z
        return m1, m2 - m1 * m1

    def marginal_density(self, psi_vals):
        logj = _log_joint_grid(self.family, self.prior,
                               np.atleast_1d(np.asarray(psi_vals, float)),
                               self.phis, self.y)
        return np.exp(logj - self.shift) @ self.wphi

    def cdf_table(self, panels_per_node=2, gl_order=8):
        n_panels = panels_per_node * self.nodes
        edges = np.linspace(self.plo, self.phi_hi, n_panels + 1)
        x, w = np.polynomial.legendre.leggauss(gl_order)
        mids = 0.5 * (edges[:-1] + edges[1:])
        rads = 0.5 * np.diff(edges)
        nodes = (mids[:, None] + rads[:, None] * x[None, :]).ravel()
        dens = self.marginal_density(nodes).reshape(n_panels, gl_order)
        panel_ints = (dens * w[None, :]).sum(axis=1) * rads
        cdf = np.concatenate([[0.0], np.cumsum(panel_ints)])
        return edges, cdf, (x, w)

    def quantile(self, prob, cdf_cache=None):
        edges, cdf, (x, w) = cdf_cache if cdf_cache is not None \
            else self.cdf_table()
        total = cdf[-1]
        target = prob * total
        k = int(np.searchsorted(cdf, target, side="right") - 1)
        k = min(max(k, 0), edges.size - 2)

        def F(xv):
            if xv <= edges[k]:
                return cdf[k] - target
            mid, rad = 0.5 * (edges[k] + xv), 0.5 * (xv - edges[k])
            dens = self.marginal_density(mid + rad * x)
            return cdf[k] + float(dens @ w) * rad - target

        lo, hi = edges[k], edges[k + 1]
        if F(hi) < 0:  # guard against round-off at panel edges
            hi = min(hi + (edges[k + 1] - edges[k]), edges[-1])
        return float(bisect(F, lo, hi, xtol=1e-13 * max(1.0, abs(hi)),
                            maxiter=200))


def quadrature_posterior(family, y, prior, probs=(),
                         fit: FitResult | None = None,
                         nodes: int = QUAD_NODES,
                         self_check: bool = True,
                         want_moments: bool = True,
                         box_sd: float = QUAD_HALF_WIDTH_SD) -> PosteriorSummary:
    """Oracle posterior: exact up to quadrature on theta_hat +/- 10 SDs.

    Returns the posterior mean/variance of R(psi) and requested psi
    quantiles by 1-d marginal integration.  With ``self_check`` the node
    count is doubled and all reported quantities must agree to 1e-6
    relative, else a QuadratureError carries both resolutions.
    """
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    hat = hat_arrays(family, y, fit.theta_hat)
    sd0 = math.sqrt(-hat.l_up_rs[0, 0])

    def compute(k):
        st = _QuadratureState(family, y, prior, fit, hat, k, box_sd=box_sd)
        mean_R = var_R = None
        if want_moments:
            mean_R, var_R = st.moments_R()
        cache = st.cdf_table() if probs else None
        qs = {round(float(p), 12): st.quantile(p, cache) for p in probs}
        return mean_R, var_R, qs

    mean_R, var_R, qs = compute(nodes)
    if self_check:
        mean2, var2, qs2 = compute(2 * nodes)
        trace = []
        if want_moments:
            if abs(mean2 - mean_R) > SELF_CHECK_RTOL * max(1.0, abs(mean_R)):
                trace.append(("mean_R", mean_R, mean2))
            if abs(var2 - var_R) > SELF_CHECK_RTOL * max(1.0, abs(var_R)):
                trace.append(("var_R", var_R, var2))
        for p in qs:
            scale = max(abs(qs[p]), sd0)
            if abs(qs2[p] - qs[p]) > SELF_CHECK_RTOL * scale:
                trace.append((f"quantile[{p}]", qs[p], qs2[p]))
        if trace:
            raise QuadratureError(
                f"node doubling changed results beyond {SELF_CHECK_RTOL}: "
                + "; ".join(f"{nm}: {a!r} -> {b!r}" for nm, a, b in trace))
        mean_R, var_R, qs = mean2, var2, qs2
    return PosteriorSummary(mu_B=None, a_B=None, sigma2_B=None,
                            quantiles=qs, method="quadrature-oracle",
                            mean_R=mean_R, var_R=var_R)


def posterior_summary(family, y, prior, probs=(), method="auto",
                      fit: FitResult | None = None, **kw) -> PosteriorSummary:
    """Default dispatch: quadrature oracle for q+1 <= 3, refined signed
    root otherwise."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    dim = fit.theta_hat.size
    if method == "auto":
        method = "quadrature" if dim <= 3 else "refined"
    if method == "quadrature":
        out = quadrature_posterior(family, y, prior, probs, fit=fit, **kw)
        hat = hat_arrays(family, y, fit.theta_hat, prior=prior)
        m = mu_B(hat)
        a = a_B(hat)
        out.mu_B = m
        out.a_B = a
        out.sigma2_B = 1.0 + a - m * m
        return out
    return laplace_summary(family, y, prior, probs, fit=fit)
