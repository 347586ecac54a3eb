"""Pure-numpy twin of :mod:`matchprior._kernels.loops`.

Batch operations vectorize across replicates with convergence masks; the
scalar entry points wrap the batch ones so there is a single code path.
Results agree with the numba kernels to floating-point roundoff (the
summation order differs), not bitwise.
"""

import math

import numpy as np

_LOG_SQRT_2PI = 0.9189385332046727417803297364
_LOG_PI = 1.1447298858494001741434273514

NAME = "numpy"


def hval(code, z):
    z = np.asarray(z, dtype=np.float64)
    if code == 0:
        return -_LOG_SQRT_2PI - 0.5 * z * z
    elif code == 1:
        return -_LOG_PI - np.log1p(z * z)
    return -z - np.exp(-z)


def hder(code, z, m):
    z = np.asarray(z, dtype=np.float64)
    if m == 0:
        return hval(code, z)
    if code == 0:
        if m == 1:
            return -z
        if m == 2:
            return np.full_like(z, -1.0)
        return np.zeros_like(z)
    if code == 1:
        w = 1.0 / (1.0 + z * z)
        if m == 1:
            return -2.0 * z * w
        if m == 2:
            return 2.0 * (z * z - 1.0) * w * w
        if m == 3:
            return 4.0 * z * (3.0 - z * z) * w ** 3
        return 12.0 * (z ** 4 - 6.0 * z * z + 1.0) * w ** 4
    e = np.exp(-z)
    if m == 1:
        return -1.0 + e
    if m == 2:
        return -e
    if m == 3:
        return e
    return -e


def loglik(code, mu, sigma, y):
    if sigma <= 0.0:
        return -np.inf
    z = (y - mu) / sigma
    return float(-y.size * math.log(sigma) + hval(code, z).sum())


def smat(code, mu, sigma, y):
    z = (y - mu) / sigma
    zp = np.vander(z, 5, increasing=True)  # (n, 5) powers 0..4
    H = np.stack([hder(code, z, m) for m in range(5)], axis=0)  # (5, n)
    return H @ zp


def _loglik_rows(code, Y, mu, s):
    z = (Y - mu[:, None]) / s[:, None]
    return -Y.shape[1] * np.log(s) + hval(code, z).sum(axis=1)


def _score_hess_rows(code, Y, mu, s):
    z = (Y - mu[:, None]) / s[:, None]
    h1 = hder(code, z, 1)
    h2 = hder(code, z, 2)
    n = Y.shape[1]
    s10 = h1.sum(axis=1)
    s11 = (h1 * z).sum(axis=1)
    s20 = h2.sum(axis=1)
    s21 = (h2 * z).sum(axis=1)
    s22 = (h2 * z * z).sum(axis=1)
    inv = 1.0 / s
    inv2 = inv * inv
    return (-s10 * inv, -(n + s11) * inv, s20 * inv2,
            (s10 + s21) * inv2, (n + 2.0 * s11 + s22) * inv2)


def score_hess(code, mu, sigma, y):
    r = _score_hess_rows(code, y[None, :], np.array([mu]), np.array([sigma]))
    return tuple(float(v[0]) for v in r)


def _golden_scale_rows(code, Y, mu, lo, hi):
    invphi = 0.6180339887498949
    a = np.log(lo)
    b = np.log(hi)
    for _ in range(200):
        if np.all(b - a < 1e-13 * np.maximum(1.0, np.abs(a) + np.abs(b))):
            break
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = _loglik_rows(code, Y, mu, np.exp(c))
        fd = _loglik_rows(code, Y, mu, np.exp(d))
        take = fc > fd
        b = np.where(take, d, b)
        a = np.where(take, a, c)
    return np.exp(0.5 * (a + b))


def batch_fit_mle(code, Y, mu0, s0, tol, maxit):
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    R = Y.shape[0]
    mu = np.asarray(mu0, dtype=np.float64).copy()
    s = np.asarray(s0, dtype=np.float64).copy()
    L0 = _loglik_rows(code, Y, mu, s)
    gn = np.full(R, np.inf)
    for _ in range(maxit):
        lm, ls, lmm, lms, lss = _score_hess_rows(code, Y, mu, s)
        gn = np.hypot(lm, ls)
        active = gn > tol * np.maximum(1.0, np.abs(L0))
        if not active.any():
            break
        det = lmm * lss - lms * lms
        newton = (lmm < 0.0) & (det > 0.0)
        scale = np.maximum.reduce([np.abs(lmm), np.abs(lss), np.ones(R)])
        with np.errstate(divide="ignore", invalid="ignore"):
            dm = np.where(newton, -(lss * lm - lms * ls) / det, lm / scale)
            ds = np.where(newton, -(lmm * ls - lms * lm) / det, ls / scale)
        t = np.ones(R)
        accepted = ~active
        for _ in range(31):
            trial = ~accepted
            if not trial.any():
                break
            mu1 = mu + t * dm
            s1 = s + t * ds
            ok = trial & (s1 > 0.0)
            L1 = np.full(R, -np.inf)
            if ok.any():
                L1[ok] = _loglik_rows(code, Y[ok], mu1[ok], s1[ok])
            good = ok & (L1 > L0 - 1e-13 * np.maximum(1.0, np.abs(L0)))
            mu = np.where(good, mu1, mu)
            s = np.where(good, s1, s)
            L0 = np.where(good, L1, L0)
            accepted |= good
            t = np.where(~accepted, 0.5 * t, t)
        stuck = active & ~accepted
        if stuck.any():
            s_new = _golden_scale_rows(code, Y[stuck], mu[stuck],
                                       s[stuck] / 64.0, s[stuck] * 64.0)
            L_new = _loglik_rows(code, Y[stuck], mu[stuck], s_new)
            improve = L_new > L0[stuck]
            idx = np.flatnonzero(stuck)[improve]
            s[idx] = s_new[improve]
            L0[idx] = L_new[improve]
            if not improve.any():
                break
    lm, ls, lmm, lms, lss = _score_hess_rows(code, Y, mu, s)
    gn = np.hypot(lm, ls)
    det = lmm * lss - lms * lms
    status = np.zeros(R, dtype=np.int64)
    status[gn > 1e-8 * np.maximum(1.0, np.abs(L0))] = 1
    saddle = (status == 0) & ~((lmm < 0.0) & (det > 0.0))
    status[saddle] = 2
    return mu, s, gn, status


def fit_mle(code, y, mu0, s0, tol, maxit):
    mu, s, gn, status = batch_fit_mle(code, y[None, :], np.array([mu0]),
                                      np.array([s0]), tol, maxit)
    return float(mu[0]), float(s[0]), float(gn[0]), maxit, int(status[0])


def _batch_fit_1d(code, Y, fixed, x0, tol, maxit, which):
    """Shared 1-d nuisance Newton.  which='loc': optimize mu; 'scale': sigma."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    R = Y.shape[0]
    x = np.asarray(x0, dtype=np.float64).copy()
    fixed = np.asarray(fixed, dtype=np.float64)

    def L_of(xv, rows=slice(None)):
        if which == "scale":
            return _loglik_rows(code, Y[rows], fixed[rows], xv)
        return _loglik_rows(code, Y[rows], xv, fixed[rows])

    def gH_of(xv):
        if which == "scale":
            lm, ls, lmm, lms, lss = _score_hess_rows(code, Y, fixed, xv)
            return ls, lss
        lm, ls, lmm, lms, lss = _score_hess_rows(code, Y, xv, fixed)
        return lm, lmm

    L0 = L_of(x)
    for _ in range(maxit):
        g, H = gH_of(x)
        active = np.abs(g) > tol * np.maximum(1.0, np.abs(L0))
        if not active.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(H < 0.0, -g / H, g / np.maximum(np.abs(H), 1.0))
        t = np.ones(R)
        accepted = ~active
        for _ in range(31):
            trial = ~accepted
            if not trial.any():
                break
            x1 = x + t * d
            ok = trial & ((x1 > 0.0) if which == "scale" else np.ones(R, bool))
            L1 = np.full(R, -np.inf)
            if ok.any():
                L1[ok] = L_of(x1[ok], ok)
            good = ok & (L1 > L0 - 1e-13 * np.maximum(1.0, np.abs(L0)))
            x = np.where(good, x1, x)
            L0 = np.where(good, L1, L0)
            accepted |= good
            t = np.where(~accepted, 0.5 * t, t)
        stuck = active & ~accepted
        if stuck.any():
            if which == "scale":
                x_new = _golden_scale_rows(code, Y[stuck], fixed[stuck],
                                           x[stuck] / 64.0, x[stuck] * 64.0)
                L_new = _loglik_rows(code, Y[stuck], fixed[stuck], x_new)
            else:
                span = np.abs(Y[stuck] - x[stuck, None]).max(axis=1)
                lo = x[stuck] - span - 8.0 * fixed[stuck]
                hi = x[stuck] + span + 8.0 * fixed[stuck]
                x_new = _golden_loc_rows(code, Y[stuck], fixed[stuck], lo, hi)
                L_new = _loglik_rows(code, Y[stuck], x_new, fixed[stuck])
            improve = L_new > L0[stuck]
            idx = np.flatnonzero(stuck)[improve]
            x[idx] = x_new[improve]
            L0[idx] = L_new[improve]
            if not improve.any():
                break
    g, H = gH_of(x)
    status = np.zeros(R, dtype=np.int64)
    status[np.abs(g) > 1e-8 * np.maximum(1.0, np.abs(L0))] = 1
    status[(status == 0) & (H >= 0.0)] = 2
    return x, np.abs(g), status


def _golden_loc_rows(code, Y, sigma, lo, hi):
    invphi = 0.6180339887498949
    a = lo.copy()
    b = hi.copy()
    for _ in range(200):
        if np.all(b - a < 1e-13 * np.maximum(1.0, np.abs(a) + np.abs(b))):
            break
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = _loglik_rows(code, Y, c, sigma)
        fd = _loglik_rows(code, Y, d, sigma)
        take = fc > fd
        b = np.where(take, d, b)
        a = np.where(take, a, c)
    return 0.5 * (a + b)


def batch_fit_fixed_loc(code, Y, mus, s0, tol, maxit):
    s, _, status = _batch_fit_1d(code, Y, mus, s0, tol, maxit, "scale")
    return s, status


def batch_fit_fixed_scale(code, Y, sigmas, m0, tol, maxit):
    m, _, status = _batch_fit_1d(code, Y, sigmas, m0, tol, maxit, "loc")
    return m, status


def fit_fixed_loc(code, y, mu, s0, tol, maxit):
    x, g, status = _batch_fit_1d(code, y[None, :], np.array([mu]),
                                 np.array([s0]), tol, maxit, "scale")
    return float(x[0]), float(g[0]), int(status[0])


def fit_fixed_scale(code, y, sigma, m0, tol, maxit):
    x, g, status = _batch_fit_1d(code, y[None, :], np.array([sigma]),
                                 np.array([m0]), tol, maxit, "loc")
    return float(x[0]), float(g[0]), int(status[0])


def loglik_grid(code, y, mus, sigmas):
    n = y.size
    out = np.empty((mus.size, sigmas.size))
    block = max(1, int(2e6 / max(1, sigmas.size * n)))
    for i0 in range(0, mus.size, block):
        mu_b = mus[i0:i0 + block]
        z = (y[None, None, :] - mu_b[:, None, None]) / sigmas[None, :, None]
        out[i0:i0 + block] = hval(code, z).sum(axis=2) - n * np.log(sigmas)[None, :]
    return out


def cond_loggrid(code, a, us, vs):
    n = a.size
    out = np.empty((us.size, vs.size))
    block = max(1, int(2e6 / max(1, vs.size * n)))
    for i0 in range(0, us.size, block):
        u_b = us[i0:i0 + block]
        z = u_b[:, None, None] + vs[None, :, None] * a[None, None, :]
        out[i0:i0 + block] = hval(code, z).sum(axis=2) \
            + (n - 2.0) * np.log(vs)[None, :]
    return out


def cond_logpairs(code, a, us, vs):
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    z = us[:, None] + vs[:, None] * a[None, :]
    return hval(code, z).sum(axis=1) + (a.size - 2.0) * np.log(vs)


def batch_loglik(code, Y, mus, sigmas):
    return _loglik_rows(code, np.atleast_2d(Y), np.asarray(mus),
                        np.asarray(sigmas))


def profile_fixed_loc_many(code, y, mus, s_start, tol, maxit):
    K = mus.size
    Y = np.broadcast_to(y, (K, y.size))
    s, status = batch_fit_fixed_loc(code, Y, mus, np.full(K, s_start),
                                    tol, maxit)
    M = _loglik_rows(code, Y, mus, s)
    return s, M, status


def profile_fixed_scale_many(code, y, sigmas, m_start, tol, maxit):
    K = sigmas.size
    Y = np.broadcast_to(y, (K, y.size))
    m, status = batch_fit_fixed_scale(code, Y, sigmas, np.full(K, m_start),
                                      tol, maxit)
    M = _loglik_rows(code, Y, m, sigmas)
    return m, M, status
