import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from joints import random_joint
from udid import PanelDataset, ValidationError
from udid._solvers import logistic_mle
from udid.discretized import (DiscretizedModel, MultinomialPre, dr_alpha_discretized, fit_multinomial_post,
                              fit_multinomial_pre, fit_pre_eps_discretized, xi_discretized_gaussian,
                              xi_discretized_multinomial)
from udid.glm_engine import OutcomeFit
from udid.or_family import make_cutpoints


def gaussian_fit(mu, sigma2):
    return OutcomeFit("gaussian", np.array([mu / sigma2, 1 / sigma2]), np.zeros(0), None, 0.0, True, 0)


def quadrature_xi(mu, sigma2, cutpoints, alpha):
    """Tilted mean by numeric integration, bin by bin."""
    sd = np.sqrt(sigma2)
    edges = np.r_[mu - 40 * sd, cutpoints, mu + 40 * sd]
    tilts = np.r_[0.0, alpha]
    num = den = 0.0
    for m in range(len(tilts)):
        lo, hi = max(edges[m], mu - 40 * sd), min(edges[m + 1], mu + 40 * sd)
        if hi <= lo:
            continue
        num += np.exp(tilts[m]) * quad(lambda y: y * norm.pdf(y, mu, sd), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
        den += np.exp(tilts[m]) * quad(lambda y: norm.pdf(y, mu, sd), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    return num / den


def test_zero_tilts_give_baseline_mean():
    xi = xi_discretized_gaussian(gaussian_fit(1.3, 0.8), [0.0, 1.0, 2.5], np.zeros((3, 1)), np.empty((1, 0)))
    assert xi[0] == pytest.approx(1.3, abs=1e-12)


@pytest.mark.parametrize("c", [-2.0, 0.3, 1.7])
def test_single_cutpoint_closed_form(c):
    mu, sigma2 = 0.4, 2.5
    xi = xi_discretized_gaussian(gaussian_fit(mu, sigma2), [mu], np.array([[c]]), np.empty((1, 0)))[0]
    expected = mu + np.sqrt(sigma2) * np.sqrt(2 / np.pi) * (np.exp(c) - 1) / (np.exp(c) + 1)
    assert xi == pytest.approx(expected, abs=1e-12)
    assert quadrature_xi(mu, sigma2, [mu], [c]) == pytest.approx(expected, abs=1e-10)


def test_matches_quadrature_with_ten_bins(rng):
    y = rng.normal(1.0, 1.5, size=2000)
    cut = make_cutpoints(y, 10)
    alpha = 0.4 * (cut - cut.mean())  # tilts from a linear log odds ratio
    xi = xi_discretized_gaussian(gaussian_fit(1.0, 2.25), cut, alpha[:, None], np.empty((1, 0)))[0]
    assert xi == pytest.approx(quadrature_xi(1.0, 2.25, cut, alpha), abs=1e-8)


def test_two_bins_match_binary_logistic(rng):
    n = 500
    y0 = rng.normal(size=n)
    a = (rng.random(n) < 0.4 + 0.2 * (y0 > 0)).astype(float)
    d = PanelDataset(y0, y0, a)
    cut = make_cutpoints(y0, 2)
    eta0, alpha_ps = fit_pre_eps_discretized(d, cut)
    ref = logistic_mle(np.column_stack([np.ones(n), (y0 > cut[0]).astype(float)]), a).coef
    np.testing.assert_allclose(np.r_[eta0, alpha_ps.ravel()], ref, atol=1e-10)
    pre = fit_multinomial_pre(d, cut)
    hi, trt = y0 > cut[0], a == 1
    sample_lor = np.log(np.sum(hi & trt) * np.sum(~hi & ~trt) / (np.sum(~hi & trt) * np.sum(hi & ~trt)))
    assert pre.alpha_or[0, 0] == pytest.approx(sample_lor, abs=1e-10)
    root = dr_alpha_discretized(d, cut, eta0, pre)
    assert root[0, 0] == pytest.approx(sample_lor, abs=1e-8)


def test_independent_treatment_gives_zero_tilts():
    rng = np.random.default_rng(11)
    n = 100_000
    y0 = rng.normal(size=n)
    a = (rng.random(n) < 0.35).astype(float)
    d = PanelDataset(y0, y0, a)
    cut = make_cutpoints(y0, 4)
    pre = fit_multinomial_pre(d, cut)
    # Each per-bin log odds ratio is a 2x2 comparison with roughly n/4 units per bin.
    se = np.sqrt(4 * (1 / (0.25 * n * 0.35) + 1 / (0.25 * n * 0.65)))
    assert np.all(np.abs(pre.alpha_or) < 3 * se)


def test_population_roots_recover_tilts():
    rng = np.random.default_rng(4)
    for _ in range(20):
        joint = random_joint(rng)
        d, w = joint.panel()
        cut = joint.cutpoints
        pre = fit_multinomial_pre(d, cut, weights=w)
        np.testing.assert_allclose(pre.alpha_or.ravel(), joint.log_or[1:], atol=1e-10)
        eta0, _ = fit_pre_eps_discretized(d, cut, weights=w)
        root = dr_alpha_discretized(d, cut, eta0, pre, weights=w)
        np.testing.assert_allclose(root.ravel(), joint.log_or[1:], atol=1e-10)
        # independent treatment: tilts vanish
        null = MultinomialPre(cut, pre.tau0, np.zeros_like(pre.alpha_or), False)
        np.testing.assert_allclose(null.probs(0.0, np.empty((1, 0))), null.probs(1.0, np.empty((1, 0))))


def test_multinomial_xi_matches_enumeration():
    rng = np.random.default_rng(9)
    joint = random_joint(rng)
    d, w = joint.panel()
    post = fit_multinomial_post(d, joint.cutpoints, weights=w)
    xi = xi_discretized_multinomial(post, joint.log_or[1:, None], np.empty((1, 0)))[0]
    assert xi == pytest.approx(joint.truth, abs=1e-10)


def test_empty_bin_is_rejected():
    y0 = np.r_[np.zeros(10), np.ones(10)]
    d = PanelDataset(y0, y0, np.tile([0, 1], 10))
    with pytest.raises(ValidationError, match="empty"):
        DiscretizedModel(d, cutpoints=[0.0, 0.5, 0.7])
    heavy = PanelDataset(np.r_[np.zeros(15), np.ones(5)], y0, np.tile([0, 1], 10))
    with pytest.raises(ValidationError, match="tied"):
        DiscretizedModel(heavy, M=4)


def test_model_reports_and_sweep_anchor(rng):
    n = 3000
    a = (rng.random(n) < 0.4).astype(float)
    y0 = rng.normal(a, 1.0)
    y1 = rng.normal(a, 1.0) - 0.5 * a
    d = PanelDataset(y0, y1, a)
    fit = DiscretizedModel(d, M=8).fit()
    for rep in fit.reports.values():
        assert rep.converged and rep.se > 0
        assert abs(rep.estimate + 0.5) < 4 * rep.se
