import numpy as np
import pytest

from gaussflow import rbig
from gaussflow.config import FlowConfig
from gaussflow.errors import ContractError
from gaussflow.eval_kl import ks_statistic, total_kl_2d
from gaussflow.flow import GaussianizationFlow
from gaussflow.kernel_layer import H_MIN

# 0.9 * 1000 ** -0.2
SILVERMAN_UNIT_1000 = 0.22606977883586219


def correlated(n, rng, rho=0.95):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    return rng.multivariate_normal([0.0, 0.0], cov, size=n)


def test_rule_of_thumb(rng):
    h = rbig.rule_of_thumb_bandwidth(rng.normal(size=1000))
    assert h == pytest.approx(SILVERMAN_UNIT_1000, rel=0.1)
    col = rng.normal(size=500)
    assert rbig.rule_of_thumb_bandwidth(3.5 * col) == pytest.approx(
        3.5 * rbig.rule_of_thumb_bandwidth(col), rel=1e-12)
    assert rbig.rule_of_thumb_bandwidth(np.full(10, 2.0)) == H_MIN
    with pytest.raises(ContractError):
        rbig.rule_of_thumb_bandwidth([1.0])


def test_pca_rotation(rng):
    x = rng.normal(size=(20_000, 2)) * [2.0, 1.0]
    R, evals = rbig.pca_rotation(x)
    np.testing.assert_allclose(R[0], [1.0, 0.0], atol=0.02)
    assert R[0, 0] > 0 and evals[0] > evals[1]
    assert np.abs(R @ R.T - np.eye(2)).max() <= 1e-10
    R, _ = rbig.pca_rotation(rng.normal(size=(500, 5)))
    assert np.abs(R @ R.T - np.eye(5)).max() <= 1e-10
    with pytest.raises(ContractError):
        rbig.pca_rotation(np.array([[np.inf, 0.0], [1.0, 2.0]]))


def test_random_rotation(rng):
    R = rbig.random_rotation(6, rng)
    assert np.abs(R @ R.T - np.eye(6)).max() <= 1e-10


def test_zero_iterations_identity(rng):
    x = rng.normal(size=(50, 3))
    model = rbig.fit(x, 0, rng=rng)
    z, ld = model.transform(x)
    assert np.array_equal(z, x) and not ld.any()


def test_gaussian_data_one_iteration():
    r = np.random.default_rng(3)
    x = r.normal(size=(10_000, 2))
    model = rbig.fit(x, 1, rng=r)
    z, _ = model.transform(x)
    assert max(ks_statistic(z[:, d]) for d in range(2)) < 0.05


def test_total_kl_decreases(rng):
    x = correlated(10_000, rng)
    seen = []
    rbig.fit(x, 5, rng=rng, kde_points=2000,
             monitor=lambda i, before, marg, after: seen.append(total_kl_2d(after)[0]))
    assert seen[-1] < seen[0]


def test_rotation_adds_no_logdet(rng):
    x = correlated(500, rng)
    model = rbig.fit(x, 2, rng=rng, kde_points=200)
    _, ld = model.transform(x)
    h, total = x, np.zeros(len(x))
    for marg, rot in model.iterations:
        h, step = marg.transform(h)
        total += step
        h = h @ rot.T
    np.testing.assert_allclose(ld, total, atol=1e-12)


def test_inverse_round_trip(rng):
    x = correlated(400, rng)
    model = rbig.fit(x, 3, "random", kde_points=200, rng=rng)
    z, _ = model.transform(x[:50])
    np.testing.assert_allclose(model.inverse(z), x[:50], atol=1e-6)


def test_rank_deficient_falls_back(rng):
    col = rng.normal(size=(300, 1))
    model = rbig.fit(np.hstack([col, col]), 2, rng=rng, kde_points=100)
    assert model.metadata["fallbacks"]
    assert model.metadata["bandwidth_rule"] == "silverman"


def test_contracts(rng):
    x = rng.normal(size=(10, 2))
    with pytest.raises(ContractError):
        rbig.fit(x, 1, kde_points=11, rng=rng)
    with pytest.raises(ContractError):
        rbig.fit(x[:1], 1, rng=rng)
    with pytest.raises(ContractError):
        rbig.fit(x, 1, "ica", rng=rng)


def test_flow_init_matches_rbig_iteration(rng):
    # with K equal to the number of rows both constructions use every row as
    # an anchor and the same bandwidth rule, so the maps must agree
    x = correlated(40, rng)
    flow = GaussianizationFlow.init_data_dependent(x, FlowConfig(2, 40), rng)
    R1 = flow.layers[0].materialize()
    R2 = flow.layers[2].materialize()
    model = rbig.fit(x @ R1.T, 2, kde_points=40, rng=rng, rotations=[R2, np.eye(2)])
    zf, ldf = flow.transform(x)
    zr, ldr = model.transform(x @ R1.T)
    np.testing.assert_allclose(zr, zf, atol=1e-6)
    np.testing.assert_allclose(ldr, ldf, atol=1e-6)
