import numpy as np
import pytest

from gaussflow import special
from gaussflow.errors import ContractError
from gaussflow.eval_kl import (gaussianity_report, ks_statistic, marginal_kl, noise_floor,
                               total_kl_2d)

# KL(N(3,1) || N(0,1)) = 3**2 / 2
KL_SHIFT3 = 4.5


def test_marginal_kl_gaussian_small(rng):
    assert marginal_kl(rng.normal(size=100_000)) < 0.01


def test_marginal_kl_shifted(rng):
    assert marginal_kl(rng.normal(3.0, 1.0, 100_000)) == pytest.approx(KL_SHIFT3, rel=0.2)


def test_marginal_kl_deterministic_and_guarded(rng):
    x = rng.normal(size=1000)
    assert marginal_kl(x) == marginal_kl(x.copy())
    kl, skipped = marginal_kl(x, with_bias=True)
    assert 0 < skipped < 0.05
    with pytest.raises(ContractError):
        marginal_kl(x[:99])


def test_total_kl_gaussian_below_noise_floor():
    _, floor = noise_floor(10_000, dim=2, repeats=10, rng=np.random.default_rng(100))
    J, jm, mi = total_kl_2d(np.random.default_rng(7).normal(size=(10_000, 2)))
    assert J <= 1.5 * floor
    assert mi >= -1e-12


def test_total_kl_perfect_correlation(rng):
    x = rng.normal(size=10_000)
    J, jm, mi = total_kl_2d(np.column_stack([x, x]))
    assert mi > 1.0
    assert J >= jm - 1e-12


def test_total_kl_guards(rng):
    with pytest.raises(ContractError):
        total_kl_2d(rng.normal(size=(10_000, 3)))
    with pytest.raises(ContractError):
        total_kl_2d(rng.normal(size=(500, 2)))


def test_ks_plugin_construction():
    n = 1000
    x = special.std_normal_icdf((np.arange(n) + 0.5) / n)
    assert ks_statistic(x) == pytest.approx(1 / (2 * n), abs=1e-12)
    assert ks_statistic(np.zeros(50)) == 0.5
    with pytest.raises(ContractError):
        ks_statistic(np.zeros(5))


def test_report(rng):
    z = rng.normal(size=(10_000, 2))
    rep = gaussianity_report(z, eps_est=0.01)
    d = rep.to_dict()
    assert d["jm"] == pytest.approx(sum(d["marginal_kl"]))
    assert d["total_kl"] is not None and d["n_samples"] == 10_000
    assert d["flagged"] == []
    assert '"jm"' in rep.to_json()
