"""Pure-numpy implementations of the hot kernels.

Shapes: ``x`` is (batch, D); ``mu`` and ``rho`` are (D, K); Householder
vectors ``V`` are (n_blocks, m, block_dim) acting on contiguous chunks of
a row of width n_blocks * block_dim.

The compiled module ``_ckernels`` exposes the same functions with the same
signatures.
"""

import math

import numpy as np
from scipy.special import erfc

V_EPS = 1e-12

_SQRT_2 = math.sqrt(2.0)


def _standardize(x, mu, rho):
    h = np.exp(rho)
    t = (x[:, :, None] - mu[None]) / h[None]
    return t, h


def _sigmoid_pair(t):
    # sigma(t), sigma(-t) without cancellation
    e = np.exp(-np.abs(t))
    big = 1.0 / (1.0 + e)
    small = e / (1.0 + e)
    pos = t >= 0
    return np.where(pos, big, small), np.where(pos, small, big), e


def kernel_forward(x, mu, rho, store=True):
    """Mixture CDF F, its complement G = 1 - F, log-density and (optionally) activations."""
    K = mu.shape[1]
    t, _ = _standardize(x, mu, rho)
    s, sc, e = _sigmoid_pair(t)
    F = s.mean(axis=2)
    G = sc.mean(axis=2)
    a = -np.abs(t) - 2.0 * np.log1p(e) - rho[None]
    amax = a.max(axis=2)
    logf = amax + np.log(np.exp(a - amax[:, :, None]).sum(axis=2)) - math.log(K)
    return F, G, logf, (s if store else None)


def kernel_backward(x, mu, rho, gF, c):
    """Reverse pass of (F, logf) given upstream gradients gF and c, both (batch, D)."""
    K = mu.shape[1]
    t, h = _standardize(x, mu, rho)
    e = np.exp(-np.abs(t))
    ds = e / (1.0 + e) ** 2
    a = -np.abs(t) - 2.0 * np.log1p(e) - rho[None]
    a -= a.max(axis=2, keepdims=True)
    w = np.exp(a)
    w /= w.sum(axis=2, keepdims=True)
    cw = c[:, :, None] * w
    gt = gF[:, :, None] * ds / K - cw * np.tanh(0.5 * t)
    gth = gt / h[None]
    dx = gth.sum(axis=2)
    dmu = -gth.sum(axis=0)
    drho = -(gt * t).sum(axis=0) - cw.sum(axis=0)
    return dmu, drho, dx


def _cdf_pair(x, mu, rho):
    t, _ = _standardize(x, mu, rho)
    s, sc, _ = _sigmoid_pair(t)
    return s.mean(axis=2), sc.mean(axis=2)


def _residual(x, mu, rho, lower, target):
    # increasing in x, zero at the solution
    F, G = _cdf_pair(x, mu, rho)
    return np.where(lower, F - target, target - G)


def kernel_invert(z, mu, rho, tol, max_iter, max_expand):
    """Invert x -> icdf(F(x)) coordinate-wise by bracketed bisection.

    Returns (x, ok) where ok is False if a bracket could not be found.
    """
    z = np.asarray(z, dtype=np.float64)
    lower = z <= 0.0
    # target probability on the tail that keeps full relative precision
    target = 0.5 * erfc(np.abs(z) / _SQRT_2)
    h = np.exp(rho)
    pad = 10.0 * h.max(axis=1)
    lo = np.broadcast_to(mu.min(axis=1) - pad, z.shape).copy()
    hi = np.broadcast_to(mu.max(axis=1) + pad, z.shape).copy()
    width = hi - lo
    for _ in range(max_expand):
        bad = _residual(lo, mu, rho, lower, target) > 0.0
        if not bad.any():
            break
        lo = np.where(bad, lo - width, lo)
        width = np.where(bad, 2.0 * width, width)
    else:
        if (_residual(lo, mu, rho, lower, target) > 0.0).any():
            return lo, False
    width = hi - lo
    for _ in range(max_expand):
        bad = _residual(hi, mu, rho, lower, target) < 0.0
        if not bad.any():
            break
        hi = np.where(bad, hi + width, hi)
        width = np.where(bad, 2.0 * width, width)
    else:
        if (_residual(hi, mu, rho, lower, target) < 0.0).any():
            return hi, False
    for _ in range(max_iter):
        active = (hi - lo) > tol
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        below = _residual(mid, mu, rho, lower, target) < 0.0
        lo = np.where(active & below, mid, lo)
        hi = np.where(active & ~below, mid, hi)
    return 0.5 * (lo + hi), True


def _reflection_order(m, transpose):
    # R = H_1 ... H_m acts right-to-left; R^T reverses that
    return range(m) if transpose else range(m - 1, -1, -1)


def householder_forward(X, V, transpose=False, store=False):
    B = X.shape[0]
    nb, m, bd = V.shape
    Y = np.array(X, dtype=np.float64, copy=True).reshape(B, nb, bd)
    norms = (V * V).sum(axis=2) + V_EPS
    inputs = np.empty((m, B, nb * bd)) if store else None
    for step, i in enumerate(_reflection_order(m, transpose)):
        if store:
            inputs[step] = Y.reshape(B, -1)
        v = V[:, i, :]
        a = np.einsum("bnk,nk->bn", Y, v)
        Y = Y - (2.0 * a / norms[:, i])[:, :, None] * v[None]
    return Y.reshape(B, nb * bd), inputs


def householder_backward(inputs, V, G, transpose=False):
    B = G.shape[0]
    nb, m, bd = V.shape
    norms = (V * V).sum(axis=2) + V_EPS
    g = np.array(G, dtype=np.float64, copy=True).reshape(B, nb, bd)
    dV = np.zeros_like(V)
    order = list(_reflection_order(m, transpose))
    for step in range(m - 1, -1, -1):
        i = order[step]
        xin = inputs[step].reshape(B, nb, bd)
        v = V[:, i, :]
        n = norms[:, i]
        a = np.einsum("bnk,nk->bn", xin, v)
        b = np.einsum("bnk,nk->bn", g, v)
        dV[:, i, :] = (
            -2.0 * (np.einsum("bn,bnk->nk", b, xin) + np.einsum("bn,bnk->nk", a, g)) / n[:, None]
            + 4.0 * (a * b).sum(axis=0)[:, None] * v / (n * n)[:, None]
        )
        g = g - (2.0 * b / n)[:, :, None] * v[None]
    return dV, g.reshape(B, nb * bd)
