"""Central finite-difference check of a flow's analytic NLL gradients."""

from dataclasses import dataclass

import numpy as np

from .config import FlowConfig
from .flow import GaussianizationFlow

FD_STEP = 1e-5
# relative errors are taken against max(|fd|, |analytic|, REL_FLOOR) so that
# near-zero gradients are judged on absolute error instead
REL_FLOOR = 1e-3


@dataclass
class GradcheckResult:
    n_checked: int
    max_rel_error: float
    worst: tuple  # (parameter key, index, fd, analytic)

    def passed(self, tol):
        return self.max_rel_error <= tol


def check_flow(flow, x, n_coords=None, rng=None, h=FD_STEP):
    """Compare analytic and finite-difference gradients on ``n_coords`` random coordinates.

    ``n_coords=None`` checks every parameter.
    """
    _, grads = flow.nll_and_grad(x)
    params = flow.parameters()
    coords = [(key, idx) for key in sorted(params) for idx in np.ndindex(params[key].shape)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(len(coords), size=n_coords, replace=False))
        coords = [coords[i] for i in pick]
    worst_err, worst = 0.0, None
    for key, idx in coords:
        arr = params[key]
        old = arr[idx]
        arr[idx] = old + h
        lp = flow.nll_and_grad(x)[0]
        arr[idx] = old - h
        lm = flow.nll_and_grad(x)[0]
        arr[idx] = old
        fd = (lp - lm) / (2 * h)
        an = grads[key][idx]
        err = abs(fd - an) / max(abs(fd), abs(an), REL_FLOOR)
        if worst is None or err > worst_err:
            worst_err, worst = err, (key, idx, fd, an)
    return GradcheckResult(len(coords), worst_err, worst)


def random_flow(rng, max_dim=4, max_layers=3, max_anchors=8, rows=50):
    """A small data-initialized flow on correlated Gaussian data, plus that data."""
    D = int(rng.integers(1, max_dim + 1))
    L = int(rng.integers(1, max_layers + 1))
    K = int(rng.integers(1, max_anchors + 1))
    data = rng.standard_normal((rows, D)) @ rng.standard_normal((D, D))
    return GaussianizationFlow.init_data_dependent(data, FlowConfig(L, K), rng), data


def suite(n_flows=20, coords_per_flow=15, batch=7, rng=None, **sizes):
    """Run :func:`check_flow` on ``n_flows`` random flows; returns the per-flow results."""
    rng = rng if rng is not None else np.random.default_rng(0)
    results = []
    for _ in range(n_flows):
        flow, data = random_flow(rng, **sizes)
        results.append(check_flow(flow, data[:batch], coords_per_flow, rng))
    return results
