import warnings

import numpy as np
import pytest
from scipy.special import expit

from udid import PanelDataset, ValidationError
from udid.baseline_pt import fit_pt, pt_att_dr, pt_att_ipw, pt_att_regression, pt_impute_binary
from udid.dgp import GaussianPt, simulate
from udid.glm_engine import orec_impute_binary


def test_binary_imputation_anchor():
    with pytest.warns(RuntimeWarning, match="outside"):
        value = pt_impute_binary(0.4, 0.8, 0.8)
    assert value == pytest.approx(1.2, abs=1e-12)
    assert orec_impute_binary(0.4, 0.8, 0.8) == pytest.approx(0.96, abs=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert pt_impute_binary(0.3, 0.3, 0.55) == pytest.approx(0.55, abs=1e-15)
    with pytest.raises(ValueError):
        pt_impute_binary(0.0, 0.5, 0.5)


def test_no_covariates_all_equal_difference_in_gains(rng):
    n = 300
    a = (rng.random(n) < 0.4).astype(float)
    y0 = rng.normal(size=n) + a
    y1 = y0 + 0.5 + 1.5 * a + rng.normal(size=n)
    d = PanelDataset(y0, y1, a)
    g = y1 - y0
    target = g[a == 1].mean() - g[a == 0].mean()
    fit = fit_pt(d)
    for rep in fit.reports.values():
        assert rep.estimate == pytest.approx(target, abs=1e-12)
    assert fit["pt-reg"].se == pytest.approx(fit["pt-ipw"].se, rel=1e-6)


def test_large_sample_recovers_effect():
    d, att = simulate(GaussianPt(n=100_000, seed=8, effect=2.0))
    rep = pt_att_regression(d)
    assert abs(rep.estimate - att) < 3 * rep.se


def test_correct_specification_estimators_agree():
    d, att = simulate(GaussianPt(n=20_000, seed=9, n_cov=2, cov_shift=0.6))
    reps = [pt_att_regression(d), pt_att_ipw(d), pt_att_dr(d)]
    for rep in reps:
        assert rep.converged and abs(rep.estimate - att) < 3 * rep.se
    assert max(r.estimate for r in reps) - min(r.estimate for r in reps) < 3 * max(r.se for r in reps)


def test_overlap_violation_is_reported(rng):
    n = 400
    x = np.sort(rng.normal(size=n))[:, None] * 4
    a = (rng.random(n) < expit(5 * x[:, 0])).astype(float)
    d = PanelDataset(rng.normal(size=n), rng.normal(size=n), a, x)
    rep = pt_att_ipw(d)
    assert not rep.converged and "propensity" in rep.diagnostics["error"]
    assert pt_att_regression(d).converged


def test_collinear_covariates_rejected(rng):
    x = rng.normal(size=(50, 1))
    d = PanelDataset(rng.normal(size=50), rng.normal(size=50), np.tile([0, 1], 25), np.hstack([x, 2 * x]))
    with pytest.raises(ValidationError, match="collinear"):
        fit_pt(d)
