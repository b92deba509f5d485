"""Rotation-based iterative Gaussianization: a frozen, non-trainable baseline.

Each iteration fits a logistic-kernel KDE per dimension on the current data,
maps every coordinate through icdf(F_KDE), then applies an orthogonal matrix
(PCA eigenvectors or a random rotation).
"""

import numpy as np

from . import special
from .errors import ContractError
from .kernel_layer import KernelLayer, rule_of_thumb_bandwidth

DEFAULT_KDE_POINTS = 10_000
RANK_TOL = 1e-12

__all__ = ["MarginalGaussianizer", "RbigModel", "fit", "pca_rotation", "random_rotation",
           "rule_of_thumb_bandwidth"]


class MarginalGaussianizer:
    """Per-dimension KDE with one shared bandwidth per dimension, frozen after fitting.

    The map is the kernel layer's with anchors = KDE points, so it reuses the
    same forward, log-det and inverse code.
    """

    kind = "kde_marginal"

    def __init__(self, points, bandwidths):
        points = np.ascontiguousarray(points, dtype=np.float64)
        bandwidths = np.asarray(bandwidths, dtype=np.float64)
        if points.ndim != 2 or bandwidths.shape != (points.shape[0],):
            raise ContractError("points must be (D, n) with one bandwidth per dimension")
        if np.any(bandwidths <= 0):
            raise ContractError("bandwidths must be positive")
        self.points = points
        self.bandwidths = bandwidths
        log_bw = np.repeat(np.log(bandwidths)[:, None], points.shape[1], axis=1)
        self._layer = KernelLayer(points, log_bw)

    @property
    def dim(self):
        return self.points.shape[0]

    @classmethod
    def fit(cls, data, kde_points, rng):
        data = np.asarray(data, dtype=np.float64)
        n = data.shape[0]
        rows = np.sort(rng.choice(n, size=kde_points, replace=False))
        pts = data[rows]
        bw = np.array([rule_of_thumb_bandwidth(pts[:, d]) for d in range(data.shape[1])])
        return cls(pts.T.copy(), bw)

    def transform(self, x):
        return self._layer.transform(x)

    def inverse(self, z):
        return self._layer.inverse(z)


class RbigModel:
    def __init__(self, dim, iterations=(), metadata=None):
        self.dim = int(dim)
        self.iterations = list(iterations)  # [(MarginalGaussianizer, R)], applied in order
        for marg, rot in self.iterations:
            if marg.dim != self.dim or rot.shape != (self.dim, self.dim):
                raise ContractError("iteration dimensions do not match the model")
        self.metadata = dict(metadata or {})

    def __repr__(self):
        return f"RbigModel(dim={self.dim}, iterations={len(self.iterations)})"

    def _check(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractError(f"expected a (batch, {self.dim}) array, got {x.shape}")
        return x

    def transform(self, x):
        h = self._check(x)
        logdet = np.zeros(h.shape[0])
        for marg, rot in self.iterations:
            h, ld = marg.transform(h)
            logdet += ld
            h = h @ rot.T  # orthogonal: no log-det contribution
        return h, logdet

    def log_likelihood(self, x):
        z, logdet = self.transform(x)
        return special.std_normal_logpdf(z).sum(axis=1) + logdet

    def inverse(self, z):
        h = self._check(z)
        for marg, rot in reversed(self.iterations):
            h = marg.inverse(h @ rot)
        return h

    def sample(self, n, rng):
        return self.inverse(rng.standard_normal((n, self.dim)))


def pca_rotation(data):
    """Rows are covariance eigenvectors by descending eigenvalue, largest entry made positive."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ContractError("pca_rotation needs a (rows > 1, D) matrix")
    if not np.all(np.isfinite(data)):
        raise ContractError("covariance is not finite")
    cov = np.atleast_2d(np.cov(data, rowvar=False))
    if not np.all(np.isfinite(cov)):
        raise ContractError("covariance is not finite")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    rot = evecs[:, order].T.copy()
    idx = np.argmax(np.abs(rot), axis=1)
    rot *= np.sign(rot[np.arange(rot.shape[0]), idx])[:, None]
    return rot, evals[order]


def random_rotation(dim, rng):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def fit(data, n_iters, rotation_kind="pca", kde_points=None, rng=None, rotations=None,
        monitor=None):
    """Fit ``n_iters`` RBIG iterations.

    ``rotations`` optionally fixes the matrix used at each iteration.
    ``monitor(i, before, after_marginal, after_rotation)`` is called with the
    data at each stage, which is how diagnostics are traced without coupling
    this module to an estimator.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ContractError("RBIG needs a (rows >= 2, D) matrix")
    if rotation_kind not in ("pca", "random"):
        raise ContractError(f"unknown rotation kind {rotation_kind!r}")
    n, D = data.shape
    if kde_points is None:
        kde_points = min(DEFAULT_KDE_POINTS, n)
    if not 2 <= kde_points <= n:
        raise ContractError(f"kde_points must lie in [2, {n}], got {kde_points}")
    if rotations is not None and len(rotations) != n_iters:
        raise ContractError("need one rotation per iteration")
    rng = rng if rng is not None else np.random.default_rng(0)
    meta = {"rotation_kind": rotation_kind, "kde_points": int(kde_points),
            "bandwidth_rule": "silverman", "fallbacks": []}
    iterations = []
    h = data
    for it in range(n_iters):
        marg = MarginalGaussianizer.fit(h, kde_points, rng)
        g, _ = marg.transform(h)
        if rotations is not None:
            rot = np.asarray(rotations[it], dtype=np.float64)
        elif rotation_kind == "pca":
            rot, evals = pca_rotation(g)
            if evals[-1] <= RANK_TOL * max(evals[0], RANK_TOL):
                rot = random_rotation(D, rng)
                meta["fallbacks"].append(it)
        else:
            rot = random_rotation(D, rng)
        out = g @ rot.T
        if monitor is not None:
            monitor(it, h, g, out)
        iterations.append((marg, rot))
        h = out
    return RbigModel(D, iterations, meta)
