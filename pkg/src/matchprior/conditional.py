"""Exact conditional inference for location-scale models given the
configuration ancillary.

With a = (y - mu_hat)/sigma_hat fixed, the pivotals u = (mu_hat - mu)/sigma
and v = sigma_hat/sigma have the parameter-free conditional density
proportional to v^(n-2) * prod_i g(u + v a_i).  All conditional lambda
arrays reduce to 2-d quadrature against this density at the reference
point (mu, sigma) = (0, 1); the sigma-power structure of location-scale
arrays then gives their theta-derivatives exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import (CoverageIntegrityError, FitError, QuadratureError)
from .families import (LocationScaleFamily, assemble_tensor, ls_slash_arrays,
                       prior_in_slots)
from .laplace import quadrature_posterior
from .likelihood import fit_mle
from .matching import a_F, mu_F
from .tensors import LambdaArrays, derive

COND_NODES_HEAVY = 160
COND_NODES = 120
COND_BOX_SD = 12.0
COND_SELF_CHECK_RTOL = 1e-5
QUANTILE_BOX_SD = 16.0
QUANTILE_NODES = 160


@dataclass(frozen=True)
class Configuration:
    """Standardized residuals (y - mu_hat)/sigma_hat of one sample."""

    a: np.ndarray

    @property
    def n(self) -> int:
        return self.a.size


def configuration(family, y, fit=None, tol: float = 1e-8) -> Configuration:
    """Configuration ancillary from a fitted sample.

    The MLE score equations in standardized form, sum h'(a_i) = 0 and
    n + sum a_i h'(a_i) = 0, are verified to ``tol``.
    """
    if not isinstance(family, LocationScaleFamily):
        raise TypeError("configuration requires a location-scale family")
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_mle(family, y)
    mu, sigma = family.to_phys(fit.theta_hat)
    a = (y - mu) / sigma
    _check_configuration(family, a, tol)
    return Configuration(a=a)


def _check_configuration(family, a, tol):
    from ._kernels import vectorized as _vec

    h1 = _vec.hder(family.code, a, 1)
    s1 = float(np.sum(h1))
    s2 = float(a.size + np.sum(a * h1))
    scale = max(1.0, float(np.abs(h1).sum()))
    if abs(s1) > tol * scale or abs(s2) > tol * scale:
        raise FitError(
            f"configuration invariants violated: sum h'(a)={s1:.2e}, "
            f"n + sum a h'(a)={s2:.2e}")


class PivotalDensity:
    """Normalized conditional density of (u, v) given the configuration."""

    def __init__(self, family, a, nodes: int | None = None,
                 box_sd: float = COND_BOX_SD, self_check: bool = True):
        if not isinstance(family, LocationScaleFamily):
            raise TypeError("conditional analysis requires location-scale")
        self.family = family
        self.code = family.code
        self.a = np.asarray(a, dtype=float)
        self.n = self.a.size
        if nodes is None:
            nodes = COND_NODES_HEAVY if self.code == 1 else COND_NODES
        self.nodes = nodes
        self.box_sd = box_sd
        self._locate_mode()
        self._build(nodes)
        if self_check:
            z1 = self.logZ
            self._build(2 * nodes)  # keep the finer grid
            if abs(self.logZ - z1) > COND_SELF_CHECK_RTOL:
                raise QuadratureError(
                    f"conditional normalizer unstable under node doubling: "
                    f"logZ {z1} -> {self.logZ}")

    # -- construction --------------------------------------------------

    def _logq_terms(self, u, v):
        z = u + v * self.a
        from ._kernels import vectorized as _vec

        h = _vec.hval(self.code, z)
        return (self.n - 2.0) * math.log(v) + float(h.sum())

    def _locate_mode(self):
        from ._kernels import vectorized as _vec

        u, v = 0.0, 1.0
        for _ in range(100):
            z = u + v * self.a
            h1 = _vec.hder(self.code, z, 1)
            h2 = _vec.hder(self.code, z, 2)
            gu = float(h1.sum())
            gv = (self.n - 2.0) / v + float((h1 * self.a).sum())
            huu = float(h2.sum())
            huv = float((h2 * self.a).sum())
            hvv = -(self.n - 2.0) / v ** 2 + float((h2 * self.a * self.a).sum())
            det = huu * hvv - huv * huv
            if not (huu < 0 and det > 0):
                break
            du = -(hvv * gu - huv * gv) / det
            dv = -(huu * gv - huv * gu) / det
            t = 1.0
            f0 = self._logq_terms(u, v)
            for _ in range(40):
                v1 = v + t * dv
                if v1 > 0 and self._logq_terms(u + t * du, v1) >= f0:
                    u, v = u + t * du, v1
                    break
                t *= 0.5
            if math.hypot(gu, gv) < 1e-10 * max(1.0, abs(f0)):
                break
        z = u + v * self.a
        h2 = _vec.hder(self.code, z, 2)
        huu = float(h2.sum())
        huv = float((h2 * self.a).sum())
        hvv = -(self.n - 2.0) / v ** 2 + float((h2 * self.a * self.a).sum())
        cov = np.linalg.inv(-np.array([[huu, huv], [huv, hvv]]))
        self.mode = (u, v)
        self.sd_u = math.sqrt(max(cov[0, 0], 1e-30))
        self.sd_v = math.sqrt(max(cov[1, 1], 1e-30))

    def _build(self, nodes):
        u0, v0 = self.mode
        ulo, uhi = u0 - self.box_sd * self.sd_u, u0 + self.box_sd * self.sd_u
        vhi = v0 + self.box_sd * self.sd_v
        x, w = np.polynomial.legendre.leggauss(nodes)
        self.us = 0.5 * (ulo + uhi) + 0.5 * (uhi - ulo) * x
        self.wu = 0.5 * (uhi - ulo) * w
        self.vs = 0.5 * vhi + 0.5 * vhi * x  # v in (0, vhi]
        self.wv = 0.5 * vhi * w
        self.ubounds = (ulo, uhi)
        self.vbounds = (0.0, vhi)
        logq = backend.kernels.cond_loggrid(self.code, self.a, self.us,
                                            self.vs)
        self.shift = float(logq.max())
        self.expq = np.exp(logq - self.shift)
        self.Z = float(self.wu @ self.expq @ self.wv)
        self.logZ = math.log(self.Z) + self.shift

    # -- queries --------------------------------------------------------

    def density(self, u, v):
        """Normalized density values (broadcasting over u, v arrays)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        z = u[..., None] + v[..., None] * self.a
        from ._kernels import vectorized as _vec

        h = _vec.hval(self.code, z).sum(axis=-1)
        logq = (self.n - 2.0) * np.log(v) + h
        return np.exp(logq - self.logZ)

    def expectation(self, grid_fn):
        """E[f(U, V) | a] for f given as grid_fn(us, vs) -> (nu, nv)."""
        G = grid_fn(self.us, self.vs)
        return float(self.wu @ (G * self.expq) @ self.wv) / self.Z

    def total_mass(self):
        return 1.0  # by construction; self-check guards the quadrature

    def prob_u_plus_vq(self, q):
        """P(U + q V >= 0 | a) by a cut inner integral in u per v-node."""
        ulo, uhi = self.ubounds
        K = 96
        x, w = np.polynomial.legendre.leggauss(K)
        cuts = np.maximum(-q * self.vs, ulo)
        active = cuts < uhi
        if not active.any():
            return 0.0
        lo = cuts[active]
        vs = self.vs[active]
        mid = 0.5 * (lo + uhi)
        rad = 0.5 * (uhi - lo)
        us = (mid[:, None] + rad[:, None] * x[None, :]).ravel()
        vv = np.repeat(vs, K)
        logq = backend.kernels.cond_logpairs(self.code, self.a, us, vv)
        inner = (np.exp(logq - self.shift).reshape(-1, K) @ w) * rad
        return float(self.wv[active] @ inner) / self.Z

    def prob_v_above(self, cut):
        """P(V >= cut | a)."""
        vlo, vhi = self.vbounds
        if cut >= vhi:
            return 0.0
        lo = max(vlo, cut)
        K = 2 * self.nodes
        x, w = np.polynomial.legendre.leggauss(K)
        vs = 0.5 * (lo + vhi) + 0.5 * (vhi - lo) * x
        wvs = 0.5 * (vhi - lo) * w
        logq = backend.kernels.cond_loggrid(self.code, self.a, self.us, vs)
        mass = float(self.wu @ np.exp(logq - self.shift) @ wvs)
        return mass / self.Z


@dataclass
class ConditionalContext:
    config: Configuration
    family: LocationScaleFamily
    B: float
    C: float
    D: float
    E: float
    lambda_ring: LambdaArrays
    density: PivotalDensity

    @property
    def eta_ring(self) -> float:
        return self.lambda_ring.eta

    def ring_field(self, theta):
        """Conditional lambda arrays at a general theta via the exact
        sigma-power scaling of location-scale arrays."""
        sigma = float(np.asarray(theta, dtype=float)[self.family.sigma_slot])
        ref = self.lambda_ring

        def scale(T, k):
            return T * sigma ** (-k)

        ing = {
            "lambda_rs": scale(ref.lambda_rs, 2),
            "lambda_rst": scale(ref.lambda_rst, 3),
            "lambda_rstu": scale(ref.lambda_rstu, 4),
            "lambda_r_s": scale(ref.lambda_r_s, 2),
            "lambda_rs_t": scale(ref.lambda_rs_t, 3),
            "lambda_r_s_t": scale(ref.lambda_r_s_t, 3),
        }
        ing.update(ls_slash_arrays(ing["lambda_rs"], ing["lambda_rst"],
                                   sigma, self.family.sigma_slot))
        return derive(ing, ref.n, "conditional")


def bcd_constants(family, config: Configuration,
                  density: PivotalDensity | None = None,
                  self_check: bool = True) -> ConditionalContext:
    """Conditional constants B, C, D (physical axes) and the full
    conditional lambda arrays by 2-d quadrature at (mu, sigma) = (0, 1)."""
    a = config.a
    n = config.n
    if density is None:
        density = PivotalDensity(family, a, self_check=self_check)

    from ._kernels import vectorized as _vec
    from .families import LS_TABLES

    def label_grids(us, vs):
        """Full-sample partial derivative values at (0, 1) on the grid,
        via chunked moment grids S[m, p](u, v) = sum_i h^(m)(z_i) z_i^p."""
        nu, nv = us.size, vs.size
        S = np.zeros((5, 5, nu, nv))
        block = max(1, int(4e6 / max(1, nv * n)))
        for i0 in range(0, nu, block):
            ub = us[i0:i0 + block]
            z = ub[:, None, None] + vs[None, :, None] * a[None, None, :]
            zp = np.ones_like(z)
            for m in range(5):
                H = _vec.hder(family.code, z, m)
                zp[...] = 1.0
                for p in range(5):
                    S[m, p, i0:i0 + block] = (H * zp).sum(axis=-1)
                    if p < 4:
                        zp *= z
        out = {}
        for kj, (tab, cn) in LS_TABLES.items():
            g = np.full((nu, nv), cn * n)
            for (m, p), c in tab.items():
                g = g + c * S[m, p]
            out[kj] = g
        return out

    G = label_grids(density.us, density.vs)
    W = density.expq
    wu, wv, Z = density.wu, density.wv, density.Z

    def emean(grid):
        return float(wu @ (grid * W) @ wv) / Z

    lam_label = {kj: emean(G[kj]) for kj in G}
    s_slot = family.sigma_slot

    def tensor(k):
        return assemble_tensor(k, [lam_label[(k, j)] for j in range(k + 1)],
                               s_slot)

    def jslot(r):
        return 1 if r == s_slot else 0

    lam = {"lambda_rs": tensor(2), "lambda_rst": tensor(3),
           "lambda_rstu": tensor(4)}
    g1 = {j: G[(1, j)] for j in range(2)}
    g2 = {j: G[(2, j)] for j in range(3)}
    lam["lambda_r_s"] = np.array(
        [[emean(g1[jslot(r)] * g1[jslot(s)]) for s in range(2)]
         for r in range(2)])
    arr = np.empty((2, 2, 2))
    arr3 = np.empty((2, 2, 2))
    for r in range(2):
        for s in range(2):
            for t in range(2):
                arr[r, s, t] = emean(g2[jslot(r) + jslot(s)] * g1[jslot(t)])
                arr3[r, s, t] = emean(g1[jslot(r)] * g1[jslot(s)]
                                      * g1[jslot(t)])
    lam["lambda_rs_t"] = arr
    lam["lambda_r_s_t"] = arr3
    lam.update(ls_slash_arrays(lam["lambda_rs"], lam["lambda_rst"], 1.0,
                               s_slot))
    ring = derive(lam, n, "conditional")

    mu_ax, sig_ax = family.mu_slot, family.sigma_slot
    B = float(ring.lambda_rs[mu_ax, mu_ax])
    C = float(ring.lambda_rs[mu_ax, sig_ax])
    D = float(ring.lambda_rs[sig_ax, sig_ax])
    E = B * D - C * C
    if not (B < 0 and D < 0 and E > 0):
        raise QuadratureError(
            f"conditional information not negative definite: B={B}, C={C}, "
            f"D={D}, E={E}")
    return ConditionalContext(config=config, family=family, B=B, C=C, D=D,
                              E=E, lambda_ring=ring, density=density)


def conditional_matching_residual(ctx: ConditionalContext, prior,
                                  theta=None) -> float:
    """LHS - RHS of the conditional matching condition:
    (dlogpi/dtheta^r) ring-lambda^{r1} =
        ring-lambda_{rs/t} ring-lambda^{r1} ring-lambda^{st}
        + (1/2) ring-eta^2 ring-lambda_{rs/t} l^{r1} l^{s1} l^{t1}."""
    fam = ctx.family
    if theta is None:
        theta = fam.from_phys(0.0, 1.0)
    theta = np.asarray(theta, dtype=float)
    arr = ctx.ring_field(theta)
    _, ratios = prior_in_slots(fam, prior)
    pi_r, _ = ratios(theta)
    lhs = float(pi_r @ arr.lambda_up_rs[:, 0])
    rhs = condition4_rhs(arr)
    return float(lhs - rhs)


def condition4_rhs(arr: LambdaArrays) -> float:
    a = arr.lambda_up_rs[:, 0]
    t1 = np.einsum("rst,r,st->", arr.lambda_rs_slash_t, a, arr.lambda_up_rs)
    t2 = 0.5 * arr.eta ** 2 * np.einsum("rst,r,s,t->",
                                        arr.lambda_rs_slash_t, a, a, a)
    return float(t1 + t2)


def condition4_rhs_closed_form(ctx: ConditionalContext, theta=None) -> float:
    """sigma C / E for location interest, -sigma B / E for scale interest."""
    sigma = 1.0 if theta is None else \
        float(np.asarray(theta, dtype=float)[ctx.family.sigma_slot])
    if ctx.family.interest == "loc":
        return sigma * ctx.C / ctx.E
    return -sigma * ctx.B / ctx.E


def mu_ring_F(ctx: ConditionalContext) -> float:
    """Conditional mean of R: the mu_F contraction on the ring arrays."""
    return mu_F(ctx.lambda_ring)


def sigma2_ring_F(ctx: ConditionalContext) -> float:
    """1 + ring-a_F - ring-mu_F^2; the gradient term vanishes exactly for
    location-scale because ring-mu_F is free of theta."""
    m = mu_F(ctx.lambda_ring)
    return float(1.0 + a_F(ctx.lambda_ring) - m * m)


# ---------------------------------------------------------------------------
# conditional coverage


def _posterior_quantile_exact(family, y, prior, prob):
    """Oracle-grade posterior quantile with a wide integration box."""
    ps = quadrature_posterior(family, y, prior, probs=(prob,),
                              nodes=QUANTILE_NODES, self_check=False,
                              want_moments=False, box_sd=QUANTILE_BOX_SD)
    return ps.quantile(prob)


def conditional_coverage(family, config: Configuration, prior, alpha,
                         density: PivotalDensity | None = None,
                         method: str = "auto",
                         surface_grid: int = 12,
                         self_check: bool = True,
                         quantile_fn=None) -> float:
    """pr{psi_true <= psi_l(Y) | A = a} for the upper 1-alpha posterior
    quantile, by quadrature over the pivotal density.

    Group-equivariant priors (sigma-power forms) admit an exact collapse:
    the quantile on the standardized configuration determines the quantile
    at every pivotal node, so a single posterior computation suffices.
    Other priors evaluate the quantile surface node-by-node (``per-node``)
    or on a coarse grid with spline interpolation (``surface``).
    """
    from . import laplace

    a = config.a
    if density is None:
        density = PivotalDensity(family, a, self_check=self_check)
    prob = 1.0 - alpha
    if quantile_fn is None:
        def quantile_fn(y):
            return _posterior_quantile_exact(family, y, prior, prob)

    if method == "auto":
        method = "equivariant" if prior.group_equivariant else "surface"

    if method == "equivariant":
        if not prior.group_equivariant:
            raise ValueError("equivariant path requires a sigma-power prior")
        q = quantile_fn(a)
        if family.interest == "loc":
            cov = density.prob_u_plus_vq(q)
        else:
            if q <= 0:
                return 0.0
            cov = density.prob_v_above(1.0 / q)
        if self_check:
            dens2 = PivotalDensity(family, a, nodes=2 * density.nodes,
                                   self_check=False, box_sd=density.box_sd)
            cov2 = dens2.prob_u_plus_vq(q) if family.interest == "loc" \
                else dens2.prob_v_above(1.0 / q)
            if abs(cov2 - cov) > COND_SELF_CHECK_RTOL:
                raise QuadratureError(
                    f"coverage unstable under node doubling: {cov} -> {cov2}")
            cov = cov2
        return float(cov)

    # quantile surface over the pivotal box
    psi_true = 0.0 if family.interest == "loc" else 1.0
    if method == "per-node":
        us, vs = density.us, density.vs
        Q = np.empty((us.size, vs.size))
        failed_w = 0.0
        joint = (density.wu[:, None] * density.expq
                 * density.wv[None, :]) / density.Z
        for i, u in enumerate(us):
            for j, v in enumerate(vs):
                try:
                    Q[i, j] = quantile_fn(u + v * a)
                except Exception:
                    Q[i, j] = np.nan
                    failed_w += joint[i, j]
        if failed_w > 1e-3:
            raise CoverageIntegrityError(
                f"posterior failures carry weight {failed_w:.2e}")
        ind = np.where(np.isnan(Q), 0.0, (Q >= psi_true).astype(float))
        return float((joint * ind).sum())

    if method != "surface":
        raise ValueError(f"unknown coverage method {method!r}")

    from scipy.interpolate import RectBivariateSpline

    def surface_cov(grid_k, dens):
        ug = np.linspace(dens.ubounds[0], dens.ubounds[1], grid_k)
        vg = np.geomspace(max(dens.vbounds[1] * 1e-3, 1e-6),
                          dens.vbounds[1], grid_k)
        Q = np.empty((grid_k, grid_k))
        failed = []
        for i, u in enumerate(ug):
            for j, v in enumerate(vg):
                try:
                    Q[i, j] = quantile_fn(u + v * a)
                except Exception:
                    Q[i, j] = np.nan
                    failed.append((i, j))
        if failed:
            mask = np.isnan(Q)
            if mask.mean() > 1e-3:
                raise CoverageIntegrityError(
                    f"{len(failed)} quantile-surface nodes failed")
            med = float(np.nanmedian(Q))
            Q[mask] = med
        spl = RectBivariateSpline(ug, np.log(vg), Q, kx=3, ky=3)
        Qf = spl(dens.us, np.log(dens.vs))
        joint = (dens.wu[:, None] * dens.expq * dens.wv[None, :]) / dens.Z
        return float((joint * (Qf >= psi_true)).sum())

    cov = surface_cov(surface_grid, density)
    if self_check:
        cov2 = surface_cov(surface_grid + 6, density)
        if abs(cov2 - cov) > 50 * COND_SELF_CHECK_RTOL:
            raise QuadratureError(
                f"coverage unstable under surface refinement: "
                f"{cov} -> {cov2}")
        cov = cov2
    return float(cov)


# ---------------------------------------------------------------------------
# conditional sampling (rejection from a bivariate-t envelope)


def sample_conditional_pivotals(family, config: Configuration, size, rng,
                                density: PivotalDensity | None = None,
                                df: float = 3.0, scale_infl: float = 1.6):
    """Draws of (u, v) from the conditional pivotal law at fixed a, by
    rejection sampling over (u, log v) with a multivariate-t envelope."""
    a = config.a
    n = config.n
    if density is None:
        density = PivotalDensity(family, a, self_check=False)
    code = family.code

    def logp(u, w):
        v = np.exp(w)
        z = u[:, None] + v[:, None] * a[None, :]
        from ._kernels import vectorized as _vec

        h = _vec.hval(code, z).sum(axis=1)
        return (n - 2.0) * w + h + w  # + w: Jacobian of v = e^w

    u0, v0 = density.mode
    w0 = math.log(v0)
    x0 = np.array([u0, w0])
    from . import numdiff

    H = numdiff.hessian(lambda x: float(logp(np.array([x[0]]),
                                             np.array([x[1]]))[0]), x0)
    cov = np.linalg.inv(-H) * scale_infl
    L = np.linalg.cholesky(cov)

    def log_t(x):  # unnormalized mvt log-density
        d = np.linalg.solve(L, (x - x0).T)
        q = (d * d).sum(axis=0)
        return -0.5 * (df + 2.0) * np.log1p(q / df)

    # bound log(p/t) on a wide probe grid
    probe_u = u0 + np.linspace(-14, 14, 161) * density.sd_u
    probe_w = w0 + np.linspace(-14, 14, 161) * (density.sd_v / v0)
    pu, pw = np.meshgrid(probe_u, probe_w, indexing="ij")
    pts = np.column_stack([pu.ravel(), pw.ravel()])
    lp = logp(pts[:, 0], pts[:, 1])
    lt = log_t(pts)
    K = float(np.max(lp - lt)) + 0.5

    out = np.empty((size, 2))
    got = 0
    max_ratio = -np.inf
    while got < size:
        m = max(2 * (size - got), 256)
        z = rng.standard_normal((m, 2))
        g = rng.chisquare(df, m) / df
        x = x0 + (z @ L.T) / np.sqrt(g)[:, None]
        lp = logp(x[:, 0], x[:, 1])
        lt = log_t(x)
        ratio = lp - lt - K
        max_ratio = max(max_ratio, float(ratio.max()))
        if max_ratio > 0:
            raise QuadratureError(
                "rejection envelope violated; increase scale_infl")
        keep = np.log(rng.random(m)) < ratio
        take = min(int(keep.sum()), size - got)
        sel = x[keep][:take]
        out[got:got + take, 0] = sel[:, 0]
        out[got:got + take, 1] = np.exp(sel[:, 1])
        got += take
    return out[:, 0], out[:, 1]


def datasets_from_pivotals(config: Configuration, u, v, mu=0.0, sigma=1.0):
    """Reconstruct samples y_i = mu + sigma (u + v a_i) at reference theta."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return mu + sigma * (u[:, None] + v[:, None] * config.a[None, :])
