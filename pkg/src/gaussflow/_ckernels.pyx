# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the functions in ``_pykernels`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, erfc

cnp.import_array()

V_EPS = 1e-12
cdef double C_V_EPS = 1e-12
cdef double INV_SQRT_2 = 0.7071067811865476
cdef double _TINY = 1e-280


def kernel_forward(const double[:, ::1] x, const double[:, ::1] mu, const double[:, ::1] rho,
                   bint store=True):
    cdef Py_ssize_t B = x.shape[0], D = x.shape[1], K = mu.shape[1]
    F_arr = np.empty((B, D))
    G_arr = np.empty((B, D))
    L_arr = np.empty((B, D))
    S_arr = np.empty((B, D, K)) if store else np.empty((0, 0, 0))
    cdef double[:, ::1] F = F_arr
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] L = L_arr
    cdef double[:, :, ::1] S = S_arr
    cdef double[:, ::1] inv_h = np.exp(-np.asarray(rho))
    cdef Py_ssize_t b, d, j
    cdef double t, e, r, sf, sg, dens, logK = log(<double>K)
    with nogil:
        for b in range(B):
            for d in range(D):
                sf = 0.0
                sg = 0.0
                dens = 0.0
                for j in range(K):
                    t = (x[b, d] - mu[d, j]) * inv_h[d, j]
                    e = exp(-fabs(t))
                    r = 1.0 / (1.0 + e)
                    if t >= 0:
                        sf += r
                        sg += e * r
                        if store:
                            S[b, d, j] = r
                    else:
                        sf += e * r
                        sg += r
                        if store:
                            S[b, d, j] = e * r
                    dens += e * r * r * inv_h[d, j]
                F[b, d] = sf / K
                G[b, d] = sg / K
                if dens > _TINY:
                    L[b, d] = log(dens) - logK
                else:
                    L[b, d] = _log_density_slow(x[b, d], mu, rho, inv_h, d, K) - logK
    return F_arr, G_arr, L_arr, (S_arr if store else None)


cdef inline double _log_density_slow(double xv, const double[:, ::1] mu,
                                     const double[:, ::1] rho,
                                     double[:, ::1] inv_h, Py_ssize_t d, Py_ssize_t K) noexcept nogil:
    # log sum_j sigma'(t_j) / h_j when the direct sum underflows
    cdef double t, a, amax = -1e308, acc = 0.0
    cdef Py_ssize_t j
    for j in range(K):
        t = (xv - mu[d, j]) * inv_h[d, j]
        a = -fabs(t) - 2.0 * log1p(exp(-fabs(t))) - rho[d, j]
        if a > amax:
            amax = a
    for j in range(K):
        t = (xv - mu[d, j]) * inv_h[d, j]
        acc += exp(-fabs(t) - 2.0 * log1p(exp(-fabs(t))) - rho[d, j] - amax)
    return amax + log(acc)


def kernel_backward(const double[:, ::1] x, const double[:, ::1] mu,
                    const double[:, ::1] rho, const double[:, ::1] gF,
                    const double[:, ::1] c):
    cdef Py_ssize_t B = x.shape[0], D = x.shape[1], K = mu.shape[1]
    dmu_arr = np.zeros((D, K))
    drho_arr = np.zeros((D, K))
    dx_arr = np.zeros((B, D))
    cdef double[:, ::1] dmu = dmu_arr
    cdef double[:, ::1] drho = drho_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] inv_h = np.exp(-np.asarray(rho))
    t_buf = np.empty(K)
    q_buf = np.empty(K)
    e_buf = np.empty(K)
    cdef double[::1] tt = t_buf
    cdef double[::1] q = q_buf
    cdef double[::1] ee = e_buf
    cdef Py_ssize_t b, d, j
    cdef double t, e, r, amax, wsum, w, gt, acc_dx, th
    with nogil:
        for b in range(B):
            for d in range(D):
                wsum = 0.0
                for j in range(K):
                    t = (x[b, d] - mu[d, j]) * inv_h[d, j]
                    e = exp(-fabs(t))
                    r = 1.0 / (1.0 + e)
                    tt[j] = t
                    ee[j] = e
                    q[j] = e * r * r * inv_h[d, j]
                    wsum += q[j]
                if not wsum > _TINY:
                    # responsibilities in log space
                    amax = -1e308
                    for j in range(K):
                        q[j] = -fabs(tt[j]) - 2.0 * log1p(ee[j]) - rho[d, j]
                        if q[j] > amax:
                            amax = q[j]
                    wsum = 0.0
                    for j in range(K):
                        q[j] = exp(q[j] - amax)
                        wsum += q[j]
                acc_dx = 0.0
                for j in range(K):
                    t = tt[j]
                    e = ee[j]
                    r = 1.0 / (1.0 + e)
                    th = (1.0 - e) * r
                    if t < 0:
                        th = -th
                    w = c[b, d] * q[j] / wsum
                    gt = gF[b, d] * (e * r * r) / K - w * th
                    acc_dx += gt * inv_h[d, j]
                    dmu[d, j] -= gt * inv_h[d, j]
                    drho[d, j] -= gt * t + w
                dx[b, d] = acc_dx
    return dmu_arr, drho_arr, dx_arr


cdef inline double _residual(double xv, const double[:, ::1] mu, double[:, ::1] inv_h,
                             Py_ssize_t d, Py_ssize_t K, bint lower,
                             double target) noexcept nogil:
    cdef double s = 0.0, t, e
    cdef Py_ssize_t j
    for j in range(K):
        t = (xv - mu[d, j]) * inv_h[d, j]
        e = exp(-fabs(t))
        if lower:
            s += (1.0 / (1.0 + e)) if t >= 0 else (e / (1.0 + e))
        else:
            s += (e / (1.0 + e)) if t >= 0 else (1.0 / (1.0 + e))
    s /= K
    return (s - target) if lower else (target - s)


def kernel_invert(const double[:, ::1] z, const double[:, ::1] mu, const double[:, ::1] rho,
                  double tol, int max_iter, int max_expand):
    cdef Py_ssize_t B = z.shape[0], D = z.shape[1], K = mu.shape[1]
    out_arr = np.empty((B, D))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] inv_h = np.exp(-np.asarray(rho))
    cdef double[::1] lo0 = np.asarray(mu).min(axis=1) - 10.0 * np.exp(np.asarray(rho)).max(axis=1)
    cdef double[::1] hi0 = np.asarray(mu).max(axis=1) + 10.0 * np.exp(np.asarray(rho)).max(axis=1)
    cdef Py_ssize_t b, d
    cdef int it
    cdef bint lower, ok = True
    cdef double target, lo, hi, mid, width
    with nogil:
        for b in range(B):
            for d in range(D):
                lower = z[b, d] <= 0.0
                target = 0.5 * erfc(fabs(z[b, d]) * INV_SQRT_2)
                lo = lo0[d]
                hi = hi0[d]
                width = hi - lo
                it = 0
                while _residual(lo, mu, inv_h, d, K, lower, target) > 0.0:
                    if it >= max_expand:
                        ok = False
                        break
                    lo -= width
                    width *= 2.0
                    it += 1
                width = hi - lo
                it = 0
                while _residual(hi, mu, inv_h, d, K, lower, target) < 0.0:
                    if it >= max_expand:
                        ok = False
                        break
                    hi += width
                    width *= 2.0
                    it += 1
                it = 0
                while hi - lo > tol and it < max_iter:
                    mid = 0.5 * (lo + hi)
                    if _residual(mid, mu, inv_h, d, K, lower, target) < 0.0:
                        lo = mid
                    else:
                        hi = mid
                    it += 1
                out[b, d] = 0.5 * (lo + hi)
    return out_arr, bool(ok)


cdef inline void _reflect_row(double[::1] row, const double[:, :, ::1] V, double[:, ::1] norms,
                              Py_ssize_t i, Py_ssize_t nb, Py_ssize_t bd) noexcept nogil:
    cdef Py_ssize_t blk, k, off
    cdef double a
    for blk in range(nb):
        off = blk * bd
        a = 0.0
        for k in range(bd):
            a += row[off + k] * V[blk, i, k]
        a = 2.0 * a / norms[blk, i]
        for k in range(bd):
            row[off + k] -= a * V[blk, i, k]


def householder_forward(X, const double[:, :, ::1] V, bint transpose=False, bint store=False):
    cdef Py_ssize_t nb = V.shape[0], m = V.shape[1], bd = V.shape[2]
    Y_arr = np.array(X, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] Y = Y_arr
    cdef Py_ssize_t B = Y.shape[0], W = Y.shape[1]
    cdef double[:, ::1] norms = (np.asarray(V) ** 2).sum(axis=2) + C_V_EPS
    inputs_arr = np.empty((m, B, W)) if store else np.empty((0, 0, 0))
    cdef double[:, :, ::1] inputs = inputs_arr
    cdef Py_ssize_t b, step, i, k
    with nogil:
        for b in range(B):
            for step in range(m):
                i = step if transpose else m - 1 - step
                if store:
                    for k in range(W):
                        inputs[step, b, k] = Y[b, k]
                _reflect_row(Y[b], V, norms, i, nb, bd)
    return Y_arr, (inputs_arr if store else None)


def householder_backward(const double[:, :, ::1] inputs, const double[:, :, ::1] V, G, bint transpose=False):
    cdef Py_ssize_t nb = V.shape[0], m = V.shape[1], bd = V.shape[2]
    g_arr = np.array(G, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t B = g.shape[0]
    dV_arr = np.zeros((nb, m, bd))
    cdef double[:, :, ::1] dV = dV_arr
    cdef double[:, ::1] norms = (np.asarray(V) ** 2).sum(axis=2) + C_V_EPS
    cdef Py_ssize_t b, step, i, blk, k, off
    cdef double a, bb, n
    with nogil:
        for b in range(B):
            for step in range(m - 1, -1, -1):
                i = step if transpose else m - 1 - step
                for blk in range(nb):
                    off = blk * bd
                    n = norms[blk, i]
                    a = 0.0
                    bb = 0.0
                    for k in range(bd):
                        a += inputs[step, b, off + k] * V[blk, i, k]
                        bb += g[b, off + k] * V[blk, i, k]
                    for k in range(bd):
                        dV[blk, i, k] += (-2.0 * (bb * inputs[step, b, off + k] + a * g[b, off + k]) / n
                                          + 4.0 * a * bb * V[blk, i, k] / (n * n))
                    for k in range(bd):
                        g[b, off + k] -= 2.0 * bb / n * V[blk, i, k]
    return dV_arr, g_arr
