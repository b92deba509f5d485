"""Histogram estimates of how far samples are from a standard normal.

J is the KL divergence of the joint to N(0, I), J_m the sum of the marginal
KLs, and I = J - J_m the multi-information (2-D only here).
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import special
from .errors import ContractError

RANGE = 6.0
MIN_MARGINAL = 100
MIN_JOINT = 10_000
MIN_KS = 10


def _edges(n_bins):
    return np.linspace(-RANGE, RANGE, n_bins + 1)


def _cell_mass(edges):
    return np.diff(special.std_normal_cdf(edges))


def _plugin_kl(counts, q, n):
    p = counts / n
    seen = counts > 0
    kl = float(np.sum(p[seen] * np.log(p[seen] / q[seen])))
    return kl, float(q[~seen].sum())


def marginal_kl(samples, n_bins=50, with_bias=False):
    """KL(samples || N(0,1)) from a histogram over [-6, 6].

    Empty bins are skipped; the N(0,1) mass they carry is returned as the
    bias note when ``with_bias`` is set.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_MARGINAL:
        raise ContractError(f"marginal_kl needs at least {MIN_MARGINAL} samples, got {x.size}")
    edges = _edges(n_bins)
    counts, _ = np.histogram(x, bins=edges)
    kl, skipped = _plugin_kl(counts, _cell_mass(edges), x.size)
    return (kl, skipped) if with_bias else kl


def total_kl_2d(samples, grid=20):
    """(J, J_m, I) from a grid x grid histogram over [-6, 6]^2.

    J_m uses the same bins, so I = J - J_m is the plug-in mutual information.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ContractError("total_kl_2d needs two-dimensional samples")
    if x.shape[0] < MIN_JOINT:
        raise ContractError(f"total_kl_2d needs at least {MIN_JOINT} samples, got {x.shape[0]}")
    edges = _edges(grid)
    q1 = _cell_mass(edges)
    counts, _, _ = np.histogram2d(x[:, 0], x[:, 1], bins=[edges, edges])
    n = x.shape[0]
    J, _ = _plugin_kl(counts.ravel(), np.outer(q1, q1).ravel(), n)
    jm = sum(_plugin_kl(counts.sum(axis=a), q1, n)[0] for a in (1, 0))
    return J, jm, J - jm


def ks_statistic(samples):
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_KS:
        raise ContractError(f"ks_statistic needs at least {MIN_KS} samples")
    return float(stats.kstest(x, "norm").statistic)


def noise_floor(n, dim=1, n_bins=50, repeats=20, rng=None, grid=20):
    """Calibrate estimator noise on N(0, I) draws of size ``n``.

    Returns the largest J_m seen (``dim`` marginals summed) and, for dim 2,
    the largest total J; the true value of both is 0.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    jm, jt = [], []
    for _ in range(repeats):
        z = rng.standard_normal((n, dim))
        jm.append(sum(marginal_kl(z[:, d], n_bins) for d in range(dim)))
        if dim == 2 and n >= MIN_JOINT:
            jt.append(total_kl_2d(z, grid)[0])
    return max(jm), (max(jt) if jt else None)


@dataclass
class GaussianityReport:
    marginal_kl: list
    ks: list
    n_samples: int
    total_kl: float | None = None
    multi_information: float | None = None
    skipped_mass: list = field(default_factory=list)
    eps_est: float | None = None

    @property
    def jm(self):
        return float(sum(self.marginal_kl))

    @property
    def flagged(self):
        """Dimensions whose estimate is negative beyond the noise floor."""
        tol = self.eps_est or 0.0
        return [d for d, v in enumerate(self.marginal_kl) if v < -tol]

    def to_dict(self):
        d = asdict(self)
        d["jm"] = self.jm
        d["flagged"] = self.flagged
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def gaussianity_report(z, n_bins=50, grid=20, eps_est=None):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ContractError("expected a (rows, D) matrix")
    kls, skipped = zip(*(marginal_kl(z[:, d], n_bins, with_bias=True) for d in range(z.shape[1])))
    report = GaussianityReport(list(kls), [ks_statistic(z[:, d]) for d in range(z.shape[1])],
                               int(z.shape[0]), skipped_mass=list(skipped), eps_est=eps_est)
    if z.shape[1] == 2 and z.shape[0] >= MIN_JOINT:
        J, jm, mi = total_kl_2d(z, grid)
        report.total_kl, report.multi_information = J, mi
    return report
