import numpy as np
import pytest

from udid.dgp import BinaryOrec, ContinuousOrec, GaussianPt, oracle_att0, simulate, verify_orec, zika_like
from udid.estimators import fit_udid


def test_same_seed_is_bitwise_identical_and_chunk_invariant():
    cfg = ContinuousOrec(n=1001, seed=42, n_cov=2, sigma_eps1=1.3)
    d1, _ = simulate(cfg)
    d2, _ = simulate(cfg)
    d3, _ = simulate(cfg, chunk=97)
    for attr in ("y0", "y1", "a", "x"):
        assert getattr(d1, attr).tobytes() == getattr(d2, attr).tobytes() == getattr(d3, attr).tobytes()
    assert not np.array_equal(simulate(ContinuousOrec(n=1001, seed=43))[0].y0, d1.y0)


def test_invalid_configs():
    with pytest.raises(ValueError):
        simulate(ContinuousOrec(n=0))
    with pytest.raises(ValueError):
        simulate(ContinuousOrec(sigma_eps0=-1.0))
    with pytest.raises(ValueError):
        simulate(GaussianPt(error_corr=1.0))
    with pytest.raises(ValueError):
        simulate(ContinuousOrec(mixture=((0.5, 0, 1), (0.5, 1, 1)), sigma_eps1=2.0))


def test_binary_marginals_and_odds_ratio():
    cfg = BinaryOrec()
    assert [cfg.marginal(t, a) for t in (0, 1) for a in (0, 1)] == pytest.approx([0.4, 0.8, 0.8, 0.96], abs=1e-15)
    report = verify_orec(cfg)
    assert report["beta0"] == pytest.approx(np.log(6.0), abs=1e-12)
    assert abs(report["beta0"] - report["beta1"]) < 1e-12
    d, _ = simulate(BinaryOrec(n=200_000, seed=1))
    for t, y in ((0, d.y0), (1, d.y1)):
        for a in (0, 1):
            p = cfg.marginal(t, a)
            rows = d.a == a
            assert abs(y[rows].mean() - p) < 4 * np.sqrt(p * (1 - p) / rows.sum())


def test_binary_effect_injection():
    d, att = simulate(BinaryOrec(n=200_000, seed=2, effect=0.03))
    assert att == 0.03
    treated = d.a == 1
    assert abs(d.y1[treated].mean() - 0.99) < 4 * np.sqrt(0.99 * 0.01 / treated.sum())


def test_continuous_control_marginals():
    cfg = ContinuousOrec(n=200_000, seed=3, mu_u=0.5, sigma_u=1.2, sigma_eps0=0.7, sigma_eps1=1.4)
    d, _ = simulate(cfg)
    ctrl = d.a == 0
    m = ctrl.sum()
    for y, var in ((d.y0, cfg.var0), (d.y1, cfg.var1)):
        assert abs(y[ctrl].mean() - 0.5) < 4 * np.sqrt(var / m)
        assert abs(y[ctrl].var() - var) < 4 * var * np.sqrt(2 / m)


def test_oracles():
    assert oracle_att0(ContinuousOrec(mu_u1=3.0, sigma_eps0=0.6, sigma_eps1=0.6)) == (3.0, 0.0)
    assert oracle_att0(BinaryOrec())[0] == pytest.approx(0.96, abs=1e-15)
    assert oracle_att0(GaussianPt(beta0=1.0, beta_a=1.0, beta_t=0.5))[0] == 2.5
    mix = ContinuousOrec(mixture=((0.3, -1.0, 0.5), (0.7, 2.0, 1.0)))
    value, se = oracle_att0(mix, draws=2_000_000)
    assert se > 0 and abs(value - (0.3 * -1.0 + 0.7 * 2.0)) < 4 * se


def test_null_effect_estimates_near_zero():
    d, att = simulate(ContinuousOrec(n=20_000, seed=4, sigma_eps1=1.5))
    assert att == 0.0
    for rep in fit_udid(d).reports.values():
        assert abs(rep.estimate) < 3 * rep.se


def test_parallel_trends_population_did():
    d, att = simulate(GaussianPt(n=100_000, seed=5, beta_a=1.0, beta_t=0.5, effect=2.0))
    g = d.y1 - d.y0
    t = d.a == 1
    did = g[t].mean() - g[~t].mean()
    se = np.sqrt(g[t].var() / t.sum() + g[~t].var() / (~t).sum())
    assert att == 2.0 and abs(did - 2.0) < 4 * se


@pytest.mark.slow
def test_orec_detector():
    assert verify_orec(ContinuousOrec(sigma_eps1=1.5, mu_u1=1.0), draws=4_000_000)["passed"]
    assert verify_orec(ContinuousOrec(mixture=((0.5, 0.0, 1.0), (0.5, 2.0, 0.5))), draws=4_000_000)["passed"]
    assert not verify_orec(GaussianPt(beta_a=1.0, sigma1=1.5), draws=2_000_000)["passed"]


def test_zika_like_shape():
    cfg = zika_like(seed=1)
    d, _ = simulate(cfg)
    assert d.n == 673 and d.p == 3
    assert 130 < d.n_treated < 240
