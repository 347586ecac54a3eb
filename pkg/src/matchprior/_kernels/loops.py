"""Loop-style kernels, compiled with numba when available.

Everything here is written against the numba nopython subset: scalars,
flat loops, preallocated arrays.  The vectorized twin of this module is
``matchprior._kernels.vectorized``; keep the two APIs in lockstep.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap

_LOG_SQRT_2PI = 0.9189385332046727417803297364
_LOG_PI = 1.1447298858494001741434273514

NAME = "numba"


@njit(cache=True)
def hval(code, z):
    """log g(z) for the standardized density of the family."""
    if code == 0:
        return -_LOG_SQRT_2PI - 0.5 * z * z
    elif code == 1:
        return -_LOG_PI - math.log1p(z * z)
    else:
        return -z - math.exp(-z)


@njit(cache=True)
def hder(code, z, m):
    """m-th derivative of log g at z, m in 0..4."""
    if m == 0:
        return hval(code, z)
    if code == 0:
        if m == 1:
            return -z
        elif m == 2:
            return -1.0
        else:
            return 0.0
    elif code == 1:
        w = 1.0 / (1.0 + z * z)
        if m == 1:
            return -2.0 * z * w
        elif m == 2:
            return 2.0 * (z * z - 1.0) * w * w
        elif m == 3:
            return 4.0 * z * (3.0 - z * z) * w * w * w
        else:
            return 12.0 * (z * z * z * z - 6.0 * z * z + 1.0) * w * w * w * w
    else:
        e = math.exp(-z)
        if m == 1:
            return -1.0 + e
        elif m == 2:
            return -e
        elif m == 3:
            return e
        else:
            return -e


@njit(cache=True)
def loglik(code, mu, sigma, y):
    if sigma <= 0.0:
        return -np.inf
    n = y.shape[0]
    acc = -n * math.log(sigma)
    for i in range(n):
        acc += hval(code, (y[i] - mu) / sigma)
    return acc


@njit(cache=True)
def smat(code, mu, sigma, y):
    """S[m, p] = sum_i h^(m)(z_i) z_i^p for m, p in 0..4."""
    S = np.zeros((5, 5))
    n = y.shape[0]
    for i in range(n):
        z = (y[i] - mu) / sigma
        zp = 1.0
        zpows = np.empty(5)
        for p in range(5):
            zpows[p] = zp
            zp *= z
        for m in range(5):
            hm = hder(code, z, m)
            for p in range(5):
                S[m, p] += hm * zpows[p]
    return S


@njit(cache=True)
def score_hess(code, mu, sigma, y):
    """(L_mu, L_sigma, L_mumu, L_musigma, L_sigmasigma) at (mu, sigma)."""
    n = y.shape[0]
    s10 = 0.0
    s11 = 0.0
    s20 = 0.0
    s21 = 0.0
    s22 = 0.0
    for i in range(n):
        z = (y[i] - mu) / sigma
        h1 = hder(code, z, 1)
        h2 = hder(code, z, 2)
        s10 += h1
        s11 += h1 * z
        s20 += h2
        s21 += h2 * z
        s22 += h2 * z * z
    inv = 1.0 / sigma
    inv2 = inv * inv
    l_m = -s10 * inv
    l_s = -(n + s11) * inv
    l_mm = s20 * inv2
    l_ms = (s10 + s21) * inv2
    l_ss = (n + 2.0 * s11 + s22) * inv2
    return l_m, l_s, l_mm, l_ms, l_ss


@njit(cache=True)
def _golden_scale(code, y, mu, lo, hi):
    """Golden-section maximizer of L(mu, sigma) over sigma in [lo, hi]."""
    invphi = 0.6180339887498949
    a = math.log(lo)
    b = math.log(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = loglik(code, mu, math.exp(c), y)
    fd = loglik(code, mu, math.exp(d), y)
    for _ in range(200):
        if b - a < 1e-13 * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = loglik(code, mu, math.exp(c), y)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = loglik(code, mu, math.exp(d), y)
    return math.exp(0.5 * (a + b))


@njit(cache=True)
def _golden_loc(code, y, sigma, lo, hi):
    invphi = 0.6180339887498949
    a = lo
    b = hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = loglik(code, c, sigma, y)
    fd = loglik(code, d, sigma, y)
    for _ in range(200):
        if b - a < 1e-13 * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = loglik(code, c, sigma, y)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = loglik(code, d, sigma, y)
    return 0.5 * (a + b)


@njit(cache=True)
def fit_mle(code, y, mu0, s0, tol, maxit):
    """Newton with step-halving.  Returns (mu, sigma, gradnorm, iters, status).

    status: 0 converged, 1 no convergence, 2 saddle (Hessian not ND).
    """
    mu = mu0
    s = s0
    L0 = loglik(code, mu, s, y)
    it = 0
    for it in range(1, maxit + 1):
        l_m, l_s, l_mm, l_ms, l_ss = score_hess(code, mu, s, y)
        gn = math.sqrt(l_m * l_m + l_s * l_s)
        if gn <= tol * max(1.0, abs(L0)):
            break
        det = l_mm * l_ss - l_ms * l_ms
        if l_mm < 0.0 and det > 0.0:
            d_m = -(l_ss * l_m - l_ms * l_s) / det
            d_s = -(l_mm * l_s - l_ms * l_m) / det
        else:
            scale = max(abs(l_mm), abs(l_ss), 1.0)
            d_m = l_m / scale
            d_s = l_s / scale
        t = 1.0
        accepted = False
        for _ in range(31):
            mu1 = mu + t * d_m
            s1 = s + t * d_s
            if s1 > 0.0:
                L1 = loglik(code, mu1, s1, y)
                if L1 > L0 - 1e-13 * max(1.0, abs(L0)):
                    mu, s, L0 = mu1, s1, L1
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # nuisance-style rescue: polish sigma by golden section, retry
            s = _golden_scale(code, y, mu, s / 64.0, s * 64.0)
            L1 = loglik(code, mu, s, y)
            if L1 <= L0:
                break
            L0 = L1
    l_m, l_s, l_mm, l_ms, l_ss = score_hess(code, mu, s, y)
    gn = math.sqrt(l_m * l_m + l_s * l_s)
    det = l_mm * l_ss - l_ms * l_ms
    status = 0
    if gn > 1e-8 * max(1.0, abs(L0)):
        status = 1
    elif not (l_mm < 0.0 and det > 0.0):
        status = 2
    return mu, s, gn, it, status


@njit(cache=True)
def fit_fixed_loc(code, y, mu, s0, tol, maxit):
    """Maximize over sigma with mu fixed.  Returns (sigma, gradnorm, status)."""
    s = s0
    L0 = loglik(code, mu, s, y)
    for _ in range(maxit):
        _, l_s, _, _, l_ss = score_hess(code, mu, s, y)
        if abs(l_s) <= tol * max(1.0, abs(L0)):
            break
        if l_ss < 0.0:
            d = -l_s / l_ss
        else:
            d = l_s / max(abs(l_ss), 1.0)
        t = 1.0
        accepted = False
        for _ in range(31):
            s1 = s + t * d
            if s1 > 0.0:
                L1 = loglik(code, mu, s1, y)
                if L1 > L0 - 1e-13 * max(1.0, abs(L0)):
                    s, L0 = s1, L1
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            s = _golden_scale(code, y, mu, s / 64.0, s * 64.0)
            L0 = loglik(code, mu, s, y)
            break
    _, l_s, _, _, l_ss = score_hess(code, mu, s, y)
    status = 0 if abs(l_s) <= 1e-8 * max(1.0, abs(L0)) else 1
    if l_ss >= 0.0:
        status = 2
    return s, abs(l_s), status


@njit(cache=True)
def fit_fixed_scale(code, y, sigma, m0, tol, maxit):
    """Maximize over mu with sigma fixed.  Returns (mu, gradnorm, status)."""
    m = m0
    L0 = loglik(code, m, sigma, y)
    for _ in range(maxit):
        l_m, _, l_mm, _, _ = score_hess(code, m, sigma, y)
        if abs(l_m) <= tol * max(1.0, abs(L0)):
            break
        if l_mm < 0.0:
            d = -l_m / l_mm
        else:
            d = l_m / max(abs(l_mm), 1.0)
        t = 1.0
        accepted = False
        for _ in range(31):
            m1 = m + t * d
            L1 = loglik(code, m1, sigma, y)
            if L1 > L0 - 1e-13 * max(1.0, abs(L0)):
                m, L0 = m1, L1
                accepted = True
                break
            t *= 0.5
        if not accepted:
            span = 0.0
            for i in range(y.shape[0]):
                span = max(span, abs(y[i] - m))
            m = _golden_loc(code, y, sigma, m - span - 8.0 * sigma,
                            m + span + 8.0 * sigma)
            L0 = loglik(code, m, sigma, y)
            break
    l_m, _, l_mm, _, _ = score_hess(code, m, sigma, y)
    status = 0 if abs(l_m) <= 1e-8 * max(1.0, abs(L0)) else 1
    if l_mm >= 0.0:
        status = 2
    return m, abs(l_m), status


@njit(cache=True)
def loglik_grid(code, y, mus, sigmas):
    """L(mu_i, sigma_j; y) on the tensor grid."""
    nm = mus.shape[0]
    ns = sigmas.shape[0]
    n = y.shape[0]
    out = np.empty((nm, ns))
    for i in range(nm):
        for j in range(ns):
            s = sigmas[j]
            acc = -n * math.log(s)
            mu = mus[i]
            for k in range(n):
                acc += hval(code, (y[k] - mu) / s)
            out[i, j] = acc
    return out


@njit(cache=True)
def cond_loggrid(code, a, us, vs):
    """(n-2) log v + sum_i h(u + v a_i) on the (u, v) tensor grid."""
    nu = us.shape[0]
    nv = vs.shape[0]
    n = a.shape[0]
    out = np.empty((nu, nv))
    for i in range(nu):
        u = us[i]
        for j in range(nv):
            v = vs[j]
            acc = (n - 2.0) * math.log(v)
            for k in range(n):
                acc += hval(code, u + v * a[k])
            out[i, j] = acc
    return out


@njit(cache=True)
def cond_logpairs(code, a, us, vs):
    """(n-2) log v + sum_i h(u + v a_i) over paired (u, v) arrays."""
    m = us.shape[0]
    n = a.shape[0]
    out = np.empty(m)
    for i in range(m):
        u = us[i]
        v = vs[i]
        acc = (n - 2.0) * math.log(v)
        for k in range(n):
            acc += hval(code, u + v * a[k])
        out[i] = acc
    return out


@njit(cache=True)
def batch_fit_mle(code, Y, mu0, s0, tol, maxit):
    R = Y.shape[0]
    mus = np.empty(R)
    sigmas = np.empty(R)
    gns = np.empty(R)
    status = np.empty(R, dtype=np.int64)
    for r in range(R):
        m, s, g, _, st = fit_mle(code, Y[r], mu0[r], s0[r], tol, maxit)
        mus[r] = m
        sigmas[r] = s
        gns[r] = g
        status[r] = st
    return mus, sigmas, gns, status


@njit(cache=True)
def batch_fit_fixed_loc(code, Y, mus, s0, tol, maxit):
    R = Y.shape[0]
    sigmas = np.empty(R)
    status = np.empty(R, dtype=np.int64)
    for r in range(R):
        s, _, st = fit_fixed_loc(code, Y[r], mus[r], s0[r], tol, maxit)
        sigmas[r] = s
        status[r] = st
    return sigmas, status


@njit(cache=True)
def batch_fit_fixed_scale(code, Y, sigmas, m0, tol, maxit):
    R = Y.shape[0]
    mus = np.empty(R)
    status = np.empty(R, dtype=np.int64)
    for r in range(R):
        m, _, st = fit_fixed_scale(code, Y[r], sigmas[r], m0[r], tol, maxit)
        mus[r] = m
        status[r] = st
    return mus, status


@njit(cache=True)
def batch_loglik(code, Y, mus, sigmas):
    R = Y.shape[0]
    out = np.empty(R)
    for r in range(R):
        out[r] = loglik(code, mus[r], sigmas[r], Y[r])
    return out


@njit(cache=True)
def profile_fixed_loc_many(code, y, mus, s_start, tol, maxit):
    """Profile over sigma for a vector of location values (warm-started)."""
    K = mus.shape[0]
    sig = np.empty(K)
    M = np.empty(K)
    status = np.empty(K, dtype=np.int64)
    s = s_start
    for k in range(K):
        s1, _, st = fit_fixed_loc(code, y, mus[k], s, tol, maxit)
        sig[k] = s1
        M[k] = loglik(code, mus[k], s1, y)
        status[k] = st
        s = s1
    return sig, M, status


@njit(cache=True)
def profile_fixed_scale_many(code, y, sigmas, m_start, tol, maxit):
    K = sigmas.shape[0]
    locs = np.empty(K)
    M = np.empty(K)
    status = np.empty(K, dtype=np.int64)
    m = m_start
    for k in range(K):
        m1, _, st = fit_fixed_scale(code, y, sigmas[k], m, tol, maxit)
        locs[k] = m1
        M[k] = loglik(code, m1, sigmas[k], y)
        status[k] = st
        m = m1
    return locs, M, status
