"""Expected and observed log-likelihood derivative arrays.

``LambdaArrays`` holds the expected cumulant tensors (orders 2-4), the
mixed cumulants, the parameter-derivative ("slash") arrays and the
derived inverse/tau/nu/eta quantities at one parameter point.
``HatArrays`` is the observed analogue at the maximum likelihood
estimate, including the prior ratio terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularityError
from .families import prior_in_slots

_TENSOR_KEYS = ("lambda_rs", "lambda_rst", "lambda_rstu", "lambda_r_s",
                "lambda_rs_t", "lambda_r_s_t", "lambda_rs_slash_t",
                "lambda_rst_slash_u", "lambda_rs_slash_tu")


@dataclass
class LambdaArrays:
    lambda_rs: np.ndarray
    lambda_rst: np.ndarray
    lambda_rstu: np.ndarray
    lambda_r_s: np.ndarray
    lambda_rs_t: np.ndarray
    lambda_r_s_t: np.ndarray
    lambda_rs_slash_t: np.ndarray
    lambda_rst_slash_u: np.ndarray
    lambda_up_rs: np.ndarray
    tau_up_rs: np.ndarray
    nu_up_rs: np.ndarray
    eta: float
    n: int
    provenance: str
    lambda_rs_slash_tu: np.ndarray | None = None
    se: dict | None = None

    @property
    def dim(self) -> int:
        return self.lambda_rs.shape[0]


def _invert_information(lambda_rs):
    d = lambda_rs.shape[0]
    try:
        inv = np.linalg.inv(lambda_rs)
    except np.linalg.LinAlgError:
        inv = None
    if inv is None or not np.all(np.isfinite(inv)):
        for k in range(1, d + 1):
            det = np.linalg.det(lambda_rs[:k, :k])
            if abs(det) < 1e-300 or not np.isfinite(det):
                raise SingularityError(
                    f"(lambda_rs) singular: leading {k}x{k} minor has "
                    f"determinant {det!r}")
        raise SingularityError("(lambda_rs) could not be inverted")
    return inv


def derive(ingredients: dict, n: int, provenance: str,
           se: dict | None = None) -> LambdaArrays:
    """Fill inverse, tau, nu, eta from raw expected arrays.

    nu^{r1} = 0 is enforced exactly by zeroing the first row and column
    after subtracting tau.
    """
    lam_rs = np.asarray(ingredients["lambda_rs"], dtype=float)
    inv = _invert_information(lam_rs)
    if inv[0, 0] >= 0:
        raise SingularityError(
            "lambda^{11} is non-negative; (lambda_rs) is not negative "
            "definite at this point")
    tau = np.outer(inv[:, 0], inv[:, 0]) / inv[0, 0]
    nu = inv - tau
    nu[0, :] = 0.0
    nu[:, 0] = 0.0
    eta = float((-inv[0, 0]) ** -0.5)
    return LambdaArrays(
        lambda_rs=lam_rs,
        lambda_rst=np.asarray(ingredients["lambda_rst"], dtype=float),
        lambda_rstu=np.asarray(ingredients["lambda_rstu"], dtype=float),
        lambda_r_s=np.asarray(ingredients["lambda_r_s"], dtype=float),
        lambda_rs_t=np.asarray(ingredients["lambda_rs_t"], dtype=float),
        lambda_r_s_t=np.asarray(ingredients["lambda_r_s_t"], dtype=float),
        lambda_rs_slash_t=np.asarray(ingredients["lambda_rs_slash_t"],
                                     dtype=float),
        lambda_rst_slash_u=np.asarray(ingredients["lambda_rst_slash_u"],
                                      dtype=float),
        lambda_rs_slash_tu=(
            None if ingredients.get("lambda_rs_slash_tu") is None
            else np.asarray(ingredients["lambda_rs_slash_tu"], dtype=float)),
        lambda_up_rs=inv,
        tau_up_rs=tau,
        nu_up_rs=nu,
        eta=eta,
        n=n,
        provenance=provenance,
        se=se,
    )


def analytic_lambda(family, theta, n) -> LambdaArrays:
    """Expected arrays from the family's closed-form/quadrature provider."""
    ing = family.lambda_ingredients(theta, n)
    return derive(ing, n, "analytic")


def slash_via_identity(lambda_rst, lambda_rs_t):
    """lambda_{rs/t} = lambda_rst + lambda_{rs,t}."""
    a = np.asarray(lambda_rst, dtype=float)
    b = np.asarray(lambda_rs_t, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


@dataclass
class IdentityReport:
    """Bartlett identity residuals, normalized by n."""

    residual_second: float
    residual_third: float
    se_second: float | None
    se_third: float | None
    n: int
    provenance: str
    tolerance: float
    flagged: bool

    def to_dict(self):
        return {
            "residual_second": self.residual_second,
            "residual_third": self.residual_third,
            "se_second": self.se_second,
            "se_third": self.se_third,
            "n": self.n,
            "provenance": self.provenance,
            "tolerance": self.tolerance,
            "flagged": self.flagged,
        }


def _third_identity_array(arr: LambdaArrays):
    t = arr.lambda_rst + arr.lambda_r_s_t
    t = t + arr.lambda_rs_t
    t = t + np.transpose(arr.lambda_rs_t, (0, 2, 1))  # lambda_{rt,s}
    t = t + np.transpose(arr.lambda_rs_t, (2, 0, 1))  # lambda_{st,r}
    return t


def check_identities(arrays: LambdaArrays, tolerance: float | None = None,
                     se_multiple: float = 4.0) -> IdentityReport:
    """Residuals of lambda_rs + lambda_{r,s} = 0 and the third-order
    Bartlett identity, each divided by n."""
    n = arrays.n
    r2_arr = (arrays.lambda_rs + arrays.lambda_r_s) / n
    r3_arr = _third_identity_array(arrays) / n
    r2 = float(np.max(np.abs(r2_arr)))
    r3 = float(np.max(np.abs(r3_arr)))
    se2 = se3 = None
    if arrays.se is not None:
        s2 = np.hypot(arrays.se["lambda_rs"], arrays.se["lambda_r_s"]) / n
        comb = (arrays.se["lambda_rst"] ** 2 + arrays.se["lambda_r_s_t"] ** 2
                + arrays.se["lambda_rs_t"] ** 2
                + np.transpose(arrays.se["lambda_rs_t"], (0, 2, 1)) ** 2
                + np.transpose(arrays.se["lambda_rs_t"], (2, 0, 1)) ** 2)
        s3 = np.sqrt(comb) / n
        se2 = float(np.max(s2))
        se3 = float(np.max(s3))
        if tolerance is None:
            flagged = bool(np.any(np.abs(r2_arr) > se_multiple * s2)
                           or np.any(np.abs(r3_arr) > se_multiple * s3))
            tolerance = se_multiple
            return IdentityReport(r2, r3, se2, se3, n, arrays.provenance,
                                  tolerance, flagged)
    if tolerance is None:
        tolerance = 1e-8
    flagged = r2 > tolerance or r3 > tolerance
    return IdentityReport(r2, r3, se2, se3, n, arrays.provenance, tolerance,
                          flagged)


_MC_KEYS = ("lambda_rs", "lambda_rst", "lambda_rstu", "lambda_r_s",
            "lambda_rs_t", "lambda_r_s_t")


def _mc_block_ls(family, theta, n, m, rng):
    """Sums of the six estimated arrays over m replicates (vectorized)."""
    from .families import LS_TABLES, assemble_tensor, ls_partial_values
    from ._kernels import vectorized as _vec

    mu, sigma = family.to_phys(theta)
    s_slot = family.sigma_slot
    Y = mu + sigma * {
        0: rng.standard_normal((m, n)),
        1: rng.standard_cauchy((m, n)),
        2: rng.gumbel(0.0, 1.0, (m, n)),
    }[family.code]
    z = (Y - mu) / sigma
    H = np.stack([_vec.hder(family.code, z, k) for k in range(5)])  # (5,m,n)
    zp = np.stack([z ** p for p in range(5)])  # (5,m,n)
    S = np.einsum("arc,prc->rap", H, zp)  # (m, 5, 5)
    vals = {}
    for (k, j), (tab, cn) in LS_TABLES.items():
        v = np.full(m, cn * n)
        for (mm, p), c in tab.items():
            v = v + c * S[:, mm, p]
        vals[(k, j)] = v * sigma ** (-k)
    w1 = np.stack([vals[(1, j)] for j in range(2)], axis=1)  # (m, 2)
    w2 = np.stack([vals[(2, j)] for j in range(3)], axis=1)
    w3 = np.stack([vals[(3, j)] for j in range(4)], axis=1)
    w4 = np.stack([vals[(4, j)] for j in range(5)], axis=1)

    def jslot(r):
        return 1 if r == s_slot else 0

    out = {
        "lambda_rs": assemble_tensor(2, w2.sum(axis=0), s_slot),
        "lambda_rst": assemble_tensor(3, w3.sum(axis=0), s_slot),
        "lambda_rstu": assemble_tensor(4, w4.sum(axis=0), s_slot),
    }
    g11 = w1.T @ w1  # indexed by j
    out["lambda_r_s"] = np.array(
        [[g11[jslot(r), jslot(s)] for s in range(2)] for r in range(2)])
    g21 = w2.T @ w1
    arr = np.empty((2, 2, 2))
    for r in range(2):
        for s in range(2):
            for t in range(2):
                arr[r, s, t] = g21[jslot(r) + jslot(s), jslot(t)]
    out["lambda_rs_t"] = arr
    g111 = np.einsum("ra,rb,rc->abc", w1, w1, w1)
    arr3 = np.empty((2, 2, 2))
    for r in range(2):
        for s in range(2):
            for t in range(2):
                arr3[r, s, t] = g111[jslot(r), jslot(s), jslot(t)]
    out["lambda_r_s_t"] = arr3
    return out


def _mc_block_generic(family, theta, n, m, rng):
    d = np.asarray(theta).size
    out = {
        "lambda_rs": np.zeros((d, d)),
        "lambda_rst": np.zeros((d, d, d)),
        "lambda_rstu": np.zeros((d, d, d, d)),
        "lambda_r_s": np.zeros((d, d)),
        "lambda_rs_t": np.zeros((d, d, d)),
        "lambda_r_s_t": np.zeros((d, d, d)),
    }
    for _ in range(m):
        y = family.sample(theta, n, rng)
        dv = family.loglik_derivs(theta, y, order=4)
        g = dv["L_r"]
        out["lambda_rs"] += dv["L_rs"]
        out["lambda_rst"] += dv["L_rst"]
        out["lambda_rstu"] += dv["L_rstu"]
        out["lambda_r_s"] += np.outer(g, g)
        out["lambda_rs_t"] += dv["L_rs"][:, :, None] * g[None, None, :]
        out["lambda_r_s_t"] += (g[:, None, None] * g[None, :, None]
                                * g[None, None, :])
    return out


def monte_carlo_lambda(family, theta, n, n_reps, rng,
                       jackknife_blocks: int = 50) -> LambdaArrays:
    """Sample-average estimates of the lambda arrays over ``n_reps``
    independent samples of size n, with jackknife standard errors over
    ``jackknife_blocks`` blocks.

    lambda_{rs/t} is filled by the identity route lambda_rst +
    lambda_{rs,t}; the higher slash arrays are not estimated here.
    Replicates are consumed in a fixed order, so results are
    reproducible given the generator state.
    """
    if n_reps < 1000:
        raise ValueError("n_reps must be at least 1e3")
    theta = np.asarray(theta, dtype=float)
    block_fn = _mc_block_ls if hasattr(family, "code") else _mc_block_generic
    edges = np.linspace(0, n_reps, jackknife_blocks + 1).astype(int)
    block_sums = []
    for b in range(jackknife_blocks):
        m = int(edges[b + 1] - edges[b])
        block_sums.append(block_fn(family, theta, n, m, rng))

    totals = {k: sum(bs[k] for bs in block_sums) for k in _MC_KEYS}
    means = {k: v / n_reps for k, v in totals.items()}

    nb = jackknife_blocks
    se = {}
    for k in _MC_KEYS:
        loo = np.stack([
            (totals[k] - block_sums[b][k]) / (n_reps - (edges[b + 1] - edges[b]))
            for b in range(nb)])
        mbar = loo.mean(axis=0)
        se[k] = np.sqrt((nb - 1) / nb * ((loo - mbar) ** 2).sum(axis=0))

    ing = dict(means)
    ing["lambda_rs_slash_t"] = slash_via_identity(means["lambda_rst"],
                                                  means["lambda_rs_t"])
    se["lambda_rs_slash_t"] = np.hypot(se["lambda_rst"], se["lambda_rs_t"])
    d = theta.size
    ing["lambda_rst_slash_u"] = np.zeros((d,) * 4)
    ing["lambda_rs_slash_tu"] = None
    return derive(ing, n, f"monte-carlo({n_reps})", se=se)


# ---------------------------------------------------------------------------
# observed arrays at the MLE


@dataclass
class HatArrays:
    theta_hat: np.ndarray
    l_rs: np.ndarray
    l_rst: np.ndarray
    l_rstu: np.ndarray
    l_up_rs: np.ndarray
    t_up_rs: np.ndarray
    v_up_rs: np.ndarray
    h_hat: float
    pi_r: np.ndarray | None
    pi_rs: np.ndarray | None
    log_pi_grad: np.ndarray | None
    n: int

    @property
    def dim(self) -> int:
        return self.l_rs.shape[0]


def hat_arrays(family, y, theta_hat, prior=None) -> HatArrays:
    """Observed tensors, inverses and prior ratios at theta_hat."""
    y = np.asarray(y, dtype=float)
    dv = family.loglik_derivs(theta_hat, y, order=4)
    l_rs = dv["L_rs"]
    inv = _invert_information(l_rs)
    if inv[0, 0] >= 0:
        raise SingularityError("L-hat^{11} non-negative at theta_hat")
    t_up = np.outer(inv[:, 0], inv[:, 0]) / inv[0, 0]
    v_up = inv - t_up
    v_up[0, :] = 0.0
    v_up[:, 0] = 0.0
    h_hat = float((-inv[0, 0]) ** -0.5)
    pi_r = pi_rs = grad = None
    if prior is not None:
        _, ratios = prior_in_slots(family, prior)
        pi_r, pi_rs = ratios(theta_hat)
        grad = pi_r.copy()  # pi_r/pi equals the gradient of log pi
    return HatArrays(
        theta_hat=np.asarray(theta_hat, dtype=float),
        l_rs=l_rs,
        l_rst=dv["L_rst"],
        l_rstu=dv["L_rstu"],
        l_up_rs=inv,
        t_up_rs=t_up,
        v_up_rs=v_up,
        h_hat=h_hat,
        pi_r=pi_r,
        pi_rs=pi_rs,
        log_pi_grad=grad,
        n=y.size,
    )
