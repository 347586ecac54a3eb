"""Central finite differences for scalar fields and derivative tensors.

Step sizes follow the truncation/round-off balance h = max(|x|, 1) *
eps**(1/(d+2)) for a d-th order central difference; nested differences
reuse the rule at each level.
"""

from __future__ import annotations

import itertools

import numpy as np

_EPS = float(np.finfo(float).eps)


def step(x, order):
    return np.maximum(np.abs(x), 1.0) * _EPS ** (1.0 / (order + 2))


def gradient(f, x, h=None):
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 1) if h is None else np.broadcast_to(h, (d,))
    g = np.empty(d)
    for r in range(d):
        e = np.zeros(d)
        e[r] = h[r]
        g[r] = (f(x + e) - f(x - e)) / (2.0 * h[r])
    return g


def hessian(f, x, h=None):
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 2) if h is None else np.broadcast_to(h, (d,))
    H = np.empty((d, d))
    f0 = f(x)
    for r in range(d):
        er = np.zeros(d)
        er[r] = h[r]
        H[r, r] = (f(x + er) - 2.0 * f0 + f(x - er)) / h[r] ** 2
        for s in range(r + 1, d):
            es = np.zeros(d)
            es[s] = h[s]
            v = (f(x + er + es) - f(x + er - es)
                 - f(x - er + es) + f(x - er - es)) / (4.0 * h[r] * h[s])
            H[r, s] = H[s, r] = v
    return H


def tensor3(f, x, h=None):
    """Third derivative tensor by differencing Hessians."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 3) if h is None else np.broadcast_to(h, (d,))
    T = np.empty((d, d, d))
    for t in range(d):
        e = np.zeros(d)
        e[t] = h[t]
        T[:, :, t] = (hessian(f, x + e) - hessian(f, x - e)) / (2.0 * h[t])
    # symmetrize over all index permutations
    return symmetrize(T)


def tensor4(f, x, h=None):
    """Fourth derivative tensor by double-differencing Hessians."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 4) if h is None else np.broadcast_to(h, (d,))
    T = np.empty((d, d, d, d))
    for t in range(d):
        et = np.zeros(d)
        et[t] = h[t]
        T[:, :, t, t] = (hessian(f, x + et) - 2.0 * hessian(f, x)
                         + hessian(f, x - et)) / h[t] ** 2
        for u in range(t + 1, d):
            eu = np.zeros(d)
            eu[u] = h[u]
            V = (hessian(f, x + et + eu) - hessian(f, x + et - eu)
                 - hessian(f, x - et + eu) + hessian(f, x - et - eu)) \
                / (4.0 * h[t] * h[u])
            T[:, :, t, u] = T[:, :, u, t] = V
    return symmetrize(T)


def symmetrize(T):
    k = T.ndim
    out = np.zeros_like(T)
    perms = list(itertools.permutations(range(k)))
    for p in perms:
        out += np.transpose(T, p)
    return out / len(perms)


def _d1_op(f, axis, h, dim):
    """O(h^4) five-point first-derivative operator along one axis."""
    e = np.zeros(dim)
    e[axis] = h

    def g(x):
        return (f(x - 2.0 * e) - 8.0 * f(x - e) + 8.0 * f(x + e)
                - f(x + 2.0 * e)) / (12.0 * h)

    return g


def nested_derivative(f, x, axes, h=None):
    """Mixed partial of f along ``axes`` by composed O(h^4) stencils.

    With the default step max(|x|,1) * eps**(1/(order+4)) the truncation
    and round-off contributions balance near eps**(4/(order+4)).
    """
    x = np.asarray(x, dtype=float)
    order = len(axes)
    g = f
    for ax in axes:
        ha = (max(abs(x[ax]), 1.0) * _EPS ** (1.0 / (order + 4))
              if h is None else h)
        g = _d1_op(g, ax, ha, x.size)
    return g(x)


def derivative_tensors(f, x, order):
    """Symmetric derivative tensors of orders 1..order from f values."""
    x = np.asarray(x, dtype=float)
    d = x.size
    out = {}
    for k in range(1, order + 1):
        T = np.empty((d,) * k)
        for idx in itertools.combinations_with_replacement(range(d), k):
            v = nested_derivative(f, x, idx)
            for p in set(itertools.permutations(idx)):
                T[p] = v
        out[k] = T
    return out


def field_divergence(field, x, h=None):
    """sum_r d(field_r)/dx^r for a vector field by central differences."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 1) if h is None else np.broadcast_to(h, (d,))
    acc = 0.0
    for r in range(d):
        e = np.zeros(d)
        e[r] = h[r]
        acc += (field(x + e)[r] - field(x - e)[r]) / (2.0 * h[r])
    return acc


def field_jacobian(field, x, h=None):
    """J[i, r] = d(field_i)/dx^r for an array-valued field."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step(x, 1) if h is None else np.broadcast_to(h, (d,))
    cols = []
    for r in range(d):
        e = np.zeros(d)
        e[r] = h[r]
        cols.append((np.asarray(field(x + e)) - np.asarray(field(x - e)))
                    / (2.0 * h[r]))
    return np.stack(cols, axis=-1)
