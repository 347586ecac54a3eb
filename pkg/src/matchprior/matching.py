"""Frequentist expansions and the probability-matching prior conditions.

Condition (1), the Welch-Peers condition, matches the Bayesian and
frequentist means of the signed root to O(n^-1); condition (2) is the
auxiliary second-order condition expressed as a divergence identity in
pi.  Both are evaluated as numerical residuals on a lambda field
(a callable theta -> LambdaArrays).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import numdiff
from .errors import MatchpriorError
from .families import prior_in_slots
from .tensors import LambdaArrays, analytic_lambda, hat_arrays

_EPS = float(np.finfo(float).eps)
WP_DEFAULT_TOL = 1e-5


@dataclass
class MatchingReport:
    theta: np.ndarray
    wp_residual: float
    so_residual: float | None
    mu_F: float
    a_F: float | None
    sigma2_F: float | None
    wp_warning: bool = False

    def row(self):
        vals = list(np.asarray(self.theta, dtype=float))
        return vals + [self.wp_residual, self.so_residual, self.mu_F,
                       self.a_F, self.sigma2_F]


def lambda_field(family, n):
    """theta -> LambdaArrays from the family's analytic provider."""
    def field(theta):
        return analytic_lambda(family, np.asarray(theta, dtype=float), n)
    return field


def mu_F(arr: LambdaArrays) -> float:
    """Frequentist mean of R(psi) to O(n^-3/2)."""
    a = arr.lambda_up_rs[:, 0]
    e = arr.eta
    inv = arr.lambda_up_rs
    l3 = arr.lambda_rst
    sl = arr.lambda_rs_slash_t
    t1 = -0.5 * e * np.einsum("rst,r,st->", l3, a, inv)
    t2 = -(e ** 3) / 6.0 * np.einsum("rst,r,s,t->", l3, a, a, a)
    t3 = e * np.einsum("rst,r,st->", sl, a, inv)
    t4 = 0.5 * e ** 3 * np.einsum("rst,r,s,t->", sl, a, a, a)
    return float(t1 + t2 + t3 + t4)


def a_F(arr: LambdaArrays) -> float:
    """Frequentist second-moment correction: E{R^2} = 1 + a_F + O(n^-3/2)."""
    if arr.lambda_rs_slash_tu is None:
        raise MatchpriorError("a_F needs lambda_{rs/tu}; the field provider "
                              "did not fill it")
    lam = arr.lambda_up_rs
    nu = arr.nu_up_rs
    l3 = arr.lambda_rst
    l4 = arr.lambda_rstu
    sl = arr.lambda_rs_slash_t
    sl3 = arr.lambda_rst_slash_u
    sl2 = arr.lambda_rs_slash_tu

    def pair(f):
        return f(lam) - f(nu)

    t1 = pair(lambda A: np.einsum(
        "rs,tu,rstu->", A, A, 0.25 * l4 - sl3
        + np.transpose(sl2, (0, 2, 1, 3))))
    # lambda_{rt/su}: entry (r,s,t,u) from the stored lambda_{rs/tu} layout
    t2 = -pair(lambda A: (
        0.25 * np.einsum("ru,st,vw,rst,uvw->", A, A, A, l3, l3)
        - np.einsum("ru,st,vw,rst,uvw->", A, A, A, l3, sl)
        + np.einsum("ru,st,vw,rst,uvw->", A, A, A, sl, sl)))
    t3 = -pair(lambda A: (
        np.einsum("ru,sw,tv,rst,uvw->", A, A, A, l3, l3) / 6.0
        - np.einsum("ru,sw,tv,rst,uvw->", A, A, A, l3, sl)
        + np.einsum("ru,sw,tv,rst,uvw->", A, A, A, sl, sl)))
    return float(t1 + t2 + t3)


def mu_F_gradient(field, theta):
    """mu_{F/r} by central differences of the mu_F field."""
    return numdiff.gradient(lambda t: mu_F(field(t)), theta,
                            h=numdiff.step(theta, 1) * 10.0)


def sigma2_F(field, theta, arr: LambdaArrays | None = None) -> float:
    """1 + a_F + 2 eta mu_{F/r} lambda^{r1} - mu_F^2."""
    theta = np.asarray(theta, dtype=float)
    if arr is None:
        arr = field(theta)
    grad = mu_F_gradient(field, theta)
    m = mu_F(arr)
    corr = 2.0 * arr.eta * float(grad @ arr.lambda_up_rs[:, 0])
    return float(1.0 + a_F(arr) + corr - m * m)


def welch_peers_residual(field, family, prior, theta) -> float:
    """LHS - RHS of condition (1):
    eta (dlogpi/dtheta^r) lambda^{r1} = -sum_r d(eta lambda^{r1})/dtheta^r.
    The divergence is computed by central differences over the field."""
    theta = np.asarray(theta, dtype=float)
    arr = field(theta)
    _, ratios = prior_in_slots(family, prior)
    pi_r, _ = ratios(theta)
    lhs = arr.eta * float(pi_r @ arr.lambda_up_rs[:, 0])

    def vec(t):
        a = field(t)
        return a.eta * a.lambda_up_rs[:, 0]

    rhs = -numdiff.field_divergence(vec, theta,
                                    h=numdiff.step(theta, 1) * 10.0)
    return float(lhs - rhs)


def second_order_residual(field, family, prior, theta,
                          wp_tol: float = WP_DEFAULT_TOL):
    """Left side of condition (2), normalized by pi(theta):

    sum_r d{pi (nu^{rs} + tau^{rs}/3) tau^{tu} lambda_stu}/dtheta^r
    + sum_{r,s} d^2(pi tau^{rs})/dtheta^r dtheta^s = 0.

    Returns (residual, wp_warning): the first-order condition is a
    precondition of (2); wp_warning flags a violation above wp_tol.
    """
    theta = np.asarray(theta, dtype=float)
    log_pi, _ = prior_in_slots(family, prior)
    log_pi0 = log_pi(theta)

    def pi_rel(t):
        return np.exp(log_pi(t) - log_pi0)

    def g_vec(t):
        a = field(t)
        contr = np.einsum("tu,stu->s", a.tau_up_rs, a.lambda_rst)
        return pi_rel(t) * (a.nu_up_rs + a.tau_up_rs / 3.0) @ contr

    def k_mat(t):
        return pi_rel(t) * field(t).tau_up_rs

    d = theta.size
    term1 = numdiff.field_divergence(g_vec, theta,
                                     h=numdiff.step(theta, 1) * 10.0)
    h2 = numdiff.step(theta, 2) * 10.0
    term2 = 0.0
    for r in range(d):
        er = np.zeros(d)
        er[r] = h2[r]
        term2 += (k_mat(theta + er)[r, r] - 2.0 * k_mat(theta)[r, r]
                  + k_mat(theta - er)[r, r]) / h2[r] ** 2
        for s in range(r + 1, d):
            es = np.zeros(d)
            es[s] = h2[s]
            cross = (k_mat(theta + er + es)[r, s]
                     - k_mat(theta + er - es)[r, s]
                     - k_mat(theta - er + es)[r, s]
                     + k_mat(theta - er - es)[r, s]) / (4.0 * h2[r] * h2[s])
            term2 += 2.0 * cross
    wp = abs(welch_peers_residual(field, family, prior, theta))
    return float(term1 + term2), bool(wp > wp_tol)


def eval_f_theta(family, theta, y, prior) -> float:
    """f(theta): the mu_B contraction evaluated from observed tensors at an
    arbitrary theta (not necessarily the MLE)."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    dv = family.loglik_derivs(theta, y, order=3)
    l_rs = dv["L_rs"]
    inv = np.linalg.inv(l_rs)
    if inv[0, 0] >= 0:
        raise MatchpriorError("L^{11} non-negative; f(theta) undefined here")
    h = float((-inv[0, 0]) ** -0.5)
    a = inv[:, 0]
    _, ratios = prior_in_slots(family, prior)
    pi_r, _ = ratios(theta)
    t1 = -0.5 * h * np.einsum("rst,r,st->", dv["L_rst"], a, inv)
    t2 = -(h ** 3) / 6.0 * np.einsum("rst,r,s,t->", dv["L_rst"], a, a, a)
    t3 = h * float(pi_r @ a)
    return float(t1 + t2 + t3)


def matching_report(family, prior, theta, n, order: int = 2,
                    field=None) -> MatchingReport:
    """Residuals and frequentist expansion quantities at one theta."""
    theta = np.asarray(theta, dtype=float)
    if field is None:
        field = lambda_field(family, n)
    arr = field(theta)
    wp = welch_peers_residual(field, family, prior, theta)
    so = warn = None
    if order >= 2:
        so, warn = second_order_residual(field, family, prior, theta)
    m = mu_F(arr)
    av = a_F(arr) if arr.lambda_rs_slash_tu is not None else None
    s2 = sigma2_F(field, theta, arr=arr) if av is not None else None
    return MatchingReport(theta=theta, wp_residual=wp, so_residual=so,
                          mu_F=m, a_F=av, sigma2_F=s2,
                          wp_warning=bool(warn) if warn is not None else False)


def default_theta_grid(family, theta_ref, points_per_axis: int = 3):
    """3x3 log/linear grid around a reference point: geometric spacing on
    positive-constrained axes, linear elsewhere."""
    theta_ref = np.asarray(theta_ref, dtype=float)
    axes = []
    for r in range(theta_ref.size):
        c = theta_ref[r]
        if r in family.positive_slots:
            axes.append(np.geomspace(c / 2.0, 2.0 * c, points_per_axis))
        else:
            axes.append(np.linspace(c - 0.5, c + 0.5, points_per_axis))
    return [np.array(t) for t in itertools.product(*axes)]
