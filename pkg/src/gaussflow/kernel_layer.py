"""Trainable element-wise Gaussianization layer.

Each coordinate d is pushed through ``icdf(F_d(x))`` where ``F_d`` is a
uniform mixture of K logistic CDFs with learnable locations (anchors) and
scales (bandwidths, stored as log-bandwidths so they stay positive).
"""

from dataclasses import dataclass

import numpy as np

from . import special
from ._backend import kernels
from .errors import ContractError, DomainError, NumericError

H_MIN = 1e-3
BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
MAX_EXPAND = 60
# rows * D * K budget per kernel call on cache-free paths
CHUNK_ELEMENTS = 1 << 21


def rule_of_thumb_bandwidth(column, n=None):
    """Silverman's rule: 0.9 * min(std, IQR / 1.34) * n ** (-1/5), floored at H_MIN.

    ``n`` defaults to the column length; the kernel layer passes K instead.
    """
    col = np.asarray(column, dtype=np.float64).ravel()
    if col.size < 2:
        raise ContractError("rule_of_thumb_bandwidth needs at least 2 values")
    if n is None:
        n = col.size
    std = col.std(ddof=1)
    q75, q25 = np.percentile(col, [75.0, 25.0])
    scale = min(std, (q75 - q25) / 1.34)
    return max(0.9 * scale * n ** -0.2, H_MIN)


@dataclass
class KernelForwardCache:
    x: np.ndarray
    u: np.ndarray  # clamped mixture CDF
    z: np.ndarray
    logf: np.ndarray
    activations: np.ndarray  # (batch, D, K) sigmoid values
    clamped: np.ndarray


class KernelLayer:
    """Per-dimension logistic-mixture CDF followed by the normal quantile."""

    kind = "kernel"

    def __init__(self, anchors, log_bandwidths):
        anchors = np.ascontiguousarray(anchors, dtype=np.float64)
        log_bandwidths = np.ascontiguousarray(log_bandwidths, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape != log_bandwidths.shape:
            raise ContractError(
                f"anchors {anchors.shape} and log_bandwidths {log_bandwidths.shape} "
                "must be matching (D, K) matrices")
        if anchors.shape[1] < 1:
            raise ContractError("need at least one anchor per dimension")
        self.anchors = anchors
        self.log_bandwidths = log_bandwidths

    @property
    def dim(self):
        return self.anchors.shape[0]

    @property
    def n_anchors(self):
        return self.anchors.shape[1]

    @property
    def bandwidths(self):
        return np.exp(self.log_bandwidths)

    def params(self):
        return {"anchors": self.anchors, "log_bandwidths": self.log_bandwidths}

    def __repr__(self):
        return f"KernelLayer(dim={self.dim}, K={self.n_anchors})"

    @classmethod
    def init_from_data(cls, samples, K, rng):
        """Anchors drawn without replacement from the rows, rule-of-thumb bandwidths."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ContractError("samples must be a (rows, D) matrix")
        n, D = samples.shape
        if n < K:
            raise ContractError(f"need at least K={K} rows to initialise anchors, got {n}")
        rows = rng.choice(n, size=K, replace=False)
        anchors = samples[rows].T.copy()
        if n < 2:
            # a single sample carries no scale information
            h = np.ones(D)
        else:
            h = np.array([rule_of_thumb_bandwidth(samples[:, d], n=K) for d in range(D)])
        log_bw = np.repeat(np.log(h)[:, None], K, axis=1)
        return cls(anchors, log_bw)

    def _check_input(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractError(f"expected a (batch, {self.dim}) array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("kernel layer input contains non-finite values")
        return x

    def _chunks(self, n):
        step = max(1, CHUNK_ELEMENTS // (self.dim * self.n_anchors))
        return [slice(i, min(i + step, n)) for i in range(0, n, step)]

    def _mixture(self, x):
        out = [kernels.kernel_forward(x[sl], self.anchors, self.log_bandwidths, False)
               for sl in self._chunks(x.shape[0])]
        return tuple(np.concatenate([o[i] for o in out]) for i in range(3))

    def mixture_cdf(self, x):
        return self._mixture(self._check_input(x))[0]

    def mixture_logpdf(self, x):
        return self._mixture(self._check_input(x))[2]

    @staticmethod
    def _gaussianize(F, G, logf):
        # evaluate the quantile on whichever tail is represented more precisely
        upper = F > 0.5
        tail = np.where(upper, G, F)
        clamped = tail < special.EPS_P
        tail = np.maximum(tail, special.EPS_P)
        q = special.std_normal_icdf(tail)
        z = np.where(upper, -q, q)
        u = np.where(upper, 1.0 - tail, tail)
        logdet = (logf - special.std_normal_logpdf(z)).sum(axis=1)
        return z, logdet, u, clamped

    def forward(self, x):
        x = self._check_input(x)
        F, G, logf, act = kernels.kernel_forward(x, self.anchors, self.log_bandwidths, True)
        z, logdet, u, clamped = self._gaussianize(F, G, logf)
        return z, logdet, KernelForwardCache(x, u, z, logf, act, clamped)

    def transform(self, x):
        """(z, logdet) without a cache, evaluated in memory-bounded chunks."""
        z, logdet, _, _ = self._gaussianize(*self._mixture(self._check_input(x)))
        return z, logdet

    def inverse(self, z):
        z = np.ascontiguousarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ContractError(f"expected a (batch, {self.dim}) array, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DomainError("kernel layer inverse got non-finite values")
        x, ok = kernels.kernel_invert(z, self.anchors, self.log_bandwidths,
                                      BISECT_TOL, BISECT_MAX_ITER, MAX_EXPAND)
        if not ok:
            raise NumericError(f"bisection bracket not found after {MAX_EXPAND} doublings")
        return x

    def backward(self, cache, dz, dlogdet):
        """Gradients of a scalar loss w.r.t. (anchors, log_bandwidths, input).

        ``dz`` is dL/dz of shape (batch, D); ``dlogdet`` is dL/dlogdet per row.
        """
        B = cache.x.shape[0]
        dz = np.asarray(dz, dtype=np.float64)
        dlogdet = np.asarray(dlogdet, dtype=np.float64)
        if dz.shape != cache.z.shape or dlogdet.shape != (B,):
            raise ContractError(
                f"upstream gradient shapes {dz.shape}, {dlogdet.shape} do not match "
                f"cache {cache.z.shape}")
        c = np.ascontiguousarray(np.broadcast_to(dlogdet[:, None], dz.shape))
        # z = icdf(u) and the -log phi(z) term of the logdet both depend on u
        gz = dz + c * cache.z
        gF = np.where(cache.clamped, 0.0, gz * np.exp(-special.std_normal_logpdf(cache.z)))
        return kernels.kernel_backward(cache.x, self.anchors, self.log_bandwidths,
                                       np.ascontiguousarray(gF), c)
