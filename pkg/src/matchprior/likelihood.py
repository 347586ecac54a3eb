"""Maximum likelihood, profile likelihood, and the signed root statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend, numdiff
from .errors import (BoundaryError, FitError, ProfileInconsistencyError,
                     SaddleError)
from .tensors import hat_arrays

NEWTON_TOL = 1e-11
NEWTON_MAXIT = 200
W_CLAMP = 1e-10
MULTIMODAL_GAP = 1e-4


@dataclass
class FitResult:
    theta_hat: np.ndarray
    loglik_at_hat: float
    converged: bool
    iterations: int
    gradient_norm: float
    multimodal: bool = False

    @property
    def psi_hat(self) -> float:
        return float(self.theta_hat[0])


@dataclass
class ProfilePoint:
    psi: float
    phi_tilde: np.ndarray
    M: float
    W: float | None = None
    R: float | None = None


def _generic_newton(family, y, theta0, fixed_slot=None):
    """Step-halving Newton on the full vector or with one slot frozen."""
    theta = np.asarray(theta0, dtype=float).copy()
    L0 = family.loglik(theta, y)
    free = [i for i in range(theta.size) if i != fixed_slot]
    it = 0
    for it in range(1, NEWTON_MAXIT + 1):
        d = family.loglik_derivs(theta, y, order=2)
        g = d["L_r"][free]
        H = d["L_rs"][np.ix_(free, free)]
        gn = float(np.linalg.norm(g))
        if gn <= NEWTON_TOL * max(1.0, abs(L0)):
            break
        try:
            evals = np.linalg.eigvalsh(H)
            if np.all(evals < 0):
                step = np.linalg.solve(H, -g)
            else:
                step = g / max(1.0, float(np.max(np.abs(evals))))
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        accepted = False
        for _ in range(31):
            cand = theta.copy()
            cand[free] = theta[free] + t * step
            if family.in_domain(cand):
                L1 = family.loglik(cand, y)
                if L1 > L0 - 1e-13 * max(1.0, abs(L0)):
                    theta, L0 = cand, L1
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
    d = family.loglik_derivs(theta, y, order=2)
    g = d["L_r"][free]
    gn = float(np.linalg.norm(g))
    H = d["L_rs"][np.ix_(free, free)]
    nd = bool(np.all(np.linalg.eigvalsh(H) < 0))
    return theta, L0, gn, it, nd


def fit_mle(family, y, start=None) -> FitResult:
    """Overall MLE via Newton with step-halving.

    Location-scale families run through the kernel backend; others use
    the generic Newton.  When two default starts land on modes whose
    log-likelihoods differ by more than 1e-4 the higher one is returned
    with the multimodal flag set.
    """
    y = np.asarray(y, dtype=float)
    starts = [np.asarray(start, dtype=float)] if start is not None \
        else family.start_values(y)
    results = []
    for th0 in starts:
        if not family.in_domain(th0):
            raise FitError(f"start {th0} outside the parameter domain")
        if hasattr(family, "code"):
            mu0, s0 = family.to_phys(th0)
            mu, s, gn, iters, status = backend.kernels.fit_mle(
                family.code, y, float(mu0), float(s0), NEWTON_TOL,
                NEWTON_MAXIT)
            theta = family.from_phys(mu, s)
            L = family.loglik(theta, y)
            results.append((theta, L, gn, int(iters), int(status)))
        else:
            theta, L, gn, iters, nd = _generic_newton(family, y, th0)
            results.append((theta, L, gn, iters, 0 if nd else 2))
    best = max(results, key=lambda r: r[1])
    multimodal = len(results) > 1 and any(
        abs(r[1] - best[1]) > MULTIMODAL_GAP for r in results)
    theta, L, gn, iters, status = best
    if status == 1:
        raise FitError(
            f"{family.key}: no convergence after {NEWTON_MAXIT} iterations; "
            f"gradient norm {gn:.3e} at theta={theta}")
    if status == 2:
        raise SaddleError(
            f"{family.key}: Hessian not negative definite at terminus "
            f"theta={theta}")
    return FitResult(theta_hat=theta, loglik_at_hat=L, converged=True,
                     iterations=iters, gradient_norm=gn,
                     multimodal=multimodal)


def fit_constrained(family, y, psi, fit: FitResult | None = None,
                    phi_start=None) -> ProfilePoint:
    """Constrained maximizer over the nuisance block at fixed interest psi."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    theta0 = fit.theta_hat.copy()
    theta0[0] = psi
    if phi_start is not None:
        theta0[1:] = phi_start
    if not family.in_domain(theta0):
        raise BoundaryError(f"psi={psi} outside the domain for {family.key}")
    if hasattr(family, "code"):
        mu0, s0 = family.to_phys(theta0)
        if family.interest == "loc":
            s, gn, status = backend.kernels.fit_fixed_loc(
                family.code, y, float(mu0), float(s0), NEWTON_TOL,
                NEWTON_MAXIT)
            theta = family.from_phys(mu0, s)
        else:
            m, gn, status = backend.kernels.fit_fixed_scale(
                family.code, y, float(s0), float(mu0), NEWTON_TOL,
                NEWTON_MAXIT)
            theta = family.from_phys(m, s0)
        sig = family.to_phys(theta)[1]
        if sig < 1e-10 * max(1.0, float(np.std(y))):
            raise BoundaryError(
                f"constrained fit escaped to sigma -> 0 at psi={psi}")
        if status == 1:
            raise FitError(f"constrained fit did not converge at psi={psi}")
        M = family.loglik(theta, y)
    else:
        theta, M, gn, _, nd = _generic_newton(family, y, theta0,
                                              fixed_slot=0)
        if not nd:
            raise FitError(f"nuisance Hessian not negative at psi={psi}")
    return ProfilePoint(psi=float(psi), phi_tilde=theta[1:], M=float(M))


def signed_root(family, y, psi, fit: FitResult | None = None) -> ProfilePoint:
    """Profile point augmented with W(psi) and R(psi)."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    pp = fit_constrained(family, y, psi, fit=fit)
    diff = fit.loglik_at_hat - pp.M
    scale = max(1.0, abs(fit.loglik_at_hat))
    if diff < 0.0:
        if diff < -W_CLAMP * scale:
            raise ProfileInconsistencyError(
                f"M(psi)={pp.M} exceeds M(psi_hat)={fit.loglik_at_hat} by "
                f"{-diff:.3e} at psi={psi}; profile solver failure")
        diff = 0.0
    W = 2.0 * diff
    R = math.copysign(math.sqrt(W), fit.psi_hat - psi) if W > 0 else 0.0
    pp.W = W
    pp.R = R
    return pp


def signed_root_grid(family, y, psis, fit: FitResult | None = None):
    """(W, R) along a grid of interest values; warm-started profile."""
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    psis = np.asarray(psis, dtype=float)
    if hasattr(family, "code"):
        mu_hat, s_hat = family.to_phys(fit.theta_hat)
        if family.interest == "loc":
            _, M, status = backend.kernels.profile_fixed_loc_many(
                family.code, y, psis, float(s_hat), NEWTON_TOL, NEWTON_MAXIT)
        else:
            _, M, status = backend.kernels.profile_fixed_scale_many(
                family.code, y, psis, float(mu_hat), NEWTON_TOL,
                NEWTON_MAXIT)
        if np.any(status == 1):
            bad = psis[np.asarray(status) == 1]
            raise FitError(f"profile scan failed at psi={bad[:5]}")
        M = np.asarray(M)
    else:
        M = np.array([fit_constrained(family, y, p, fit=fit).M
                      for p in psis])
    diff = fit.loglik_at_hat - M
    scale = max(1.0, abs(fit.loglik_at_hat))
    if np.any(diff < -W_CLAMP * scale):
        raise ProfileInconsistencyError("negative W beyond round-off on grid")
    W = 2.0 * np.clip(diff, 0.0, None)
    R = np.sign(fit.psi_hat - psis) * np.sqrt(W)
    return W, R


def profile_curvature(family, y, fit: FitResult | None = None,
                      cross_check: bool = True):
    """(M11_hat, M111_hat, H_hat) from the observed-tensor closed forms.

    M11 = 1/L^{11}, M111 = L_rst L^{r1} L^{s1} L^{t1} / (L^{11})^3;
    M11 is cross-checked against a finite-difference second derivative of
    the computed profile likelihood.
    """
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    hat = hat_arrays(family, y, fit.theta_hat)
    a = hat.l_up_rs[:, 0]
    l11 = hat.l_up_rs[0, 0]
    m11 = 1.0 / l11
    m111 = float(np.einsum("rst,r,s,t->", hat.l_rst, a, a, a) / l11 ** 3)
    h_hat = math.sqrt(-m11)
    if cross_check:
        psi_hat = fit.psi_hat
        h = max(abs(psi_hat), 1.0) * np.finfo(float).eps ** (1.0 / 6.0)

        def M(p):
            return fit_constrained(family, y, p, fit=fit).M

        m11_fd = (-M(psi_hat + 2 * h) + 16 * M(psi_hat + h)
                  - 30 * fit.loglik_at_hat + 16 * M(psi_hat - h)
                  - M(psi_hat - 2 * h)) / (12.0 * h * h)
        if abs(m11_fd - m11) > 1e-4 * max(1.0, abs(m11)):
            raise ProfileInconsistencyError(
                f"profile curvature cross-check failed: closed form {m11}, "
                f"finite difference {m11_fd}")
    return m11, m111, h_hat


def r_expansion(family, y, psi, fit: FitResult | None = None) -> float:
    """Quadratic expansion of R about psi_hat:
    R ~= Z - (1/6) H^3 L_rst L^{r1}L^{s1}L^{t1} Z^2 with Z = H (psi_hat - psi).
    """
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    hat = hat_arrays(family, y, fit.theta_hat)
    a = hat.l_up_rs[:, 0]
    c = float(np.einsum("rst,r,s,t->", hat.l_rst, a, a, a))
    z = hat.h_hat * (fit.psi_hat - psi)
    return z - (hat.h_hat ** 3) * c * z * z / 6.0
