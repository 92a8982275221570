import numpy as np
import pytest

from udid import PanelDataset, ValidationError
from udid.dgp import ContinuousOrec, simulate
from udid.estimators import UdidModel
from udid.sensitivity import (DEFAULT_GRID, WALD_THRESHOLD, SensitivityCurve, _breakdowns,
                              covariate_invariance, sensitivity_sweep)


def test_threshold_value():
    assert WALD_THRESHOLD == pytest.approx(3.8415, abs=1e-4)
    assert DEFAULT_GRID.size == 81 and DEFAULT_GRID[40] == 0.0


def test_zero_point_reuses_base_fit():
    d, _ = simulate(ContinuousOrec(n=800, seed=3, n_cov=1))
    model = UdidModel(d, estimators=("dr",))
    base = model.fit()
    curve = sensitivity_sweep(model, "dr", np.linspace(-1, 1, 5), base)
    assert curve.estimate[2] == base["dr"].estimate
    assert curve.se[2] == base["dr"].se
    assert curve.converged.all()
    # a positive departure pulls the imputed control mean upward
    assert curve.estimate[0] > curve.estimate[2] > curve.estimate[4]


def test_grid_validation():
    d, _ = simulate(ContinuousOrec(n=200, seed=1))
    model = UdidModel(d, estimators=("glm",))
    with pytest.raises(ValueError, match="contain 0"):
        sensitivity_sweep(model, "glm", [-1.0, 0.5, 1.0])
    with pytest.raises(ValueError, match="increasing"):
        sensitivity_sweep(model, "glm", [1.0, 0.0])
    with pytest.raises(ValueError, match="not enabled"):
        sensitivity_sweep(model, "dr", [0.0])


def _curve(grid, est, half_width, ok=None):
    grid = np.asarray(grid, float)
    est = np.asarray(est, float)
    ok = np.ones(grid.size, bool) if ok is None else np.asarray(ok)
    c = SensitivityCurve("dr", grid, est, np.ones_like(est), est - half_width, est + half_width, ok, 1.0)
    _breakdowns(c)
    return c


def test_breakdown_definitions():
    c = _curve([-2, -1, 0, 1, 2], [-4.0, -3.0, -2.0, -0.5, 1.0], 1.0)
    assert c.breakdown_nonsig["positive"] == 1.0
    assert c.breakdown_zero["positive"] == pytest.approx(1 + 0.5 / 1.5)
    assert c.breakdown_nonsig["negative"] is None and c.breakdown_zero["negative"] is None


def test_breakdown_skips_failed_points():
    c = _curve([0, 1, 2, 3], [-2.0, 5.0, -1.5, 1.0], 0.5, ok=[True, False, True, True])
    assert c.breakdown_zero["positive"] == pytest.approx(2 + 1.5 / 2.5)
    assert c.breakdown_nonsig["positive"] is None


def test_invariance_identical_periods_zero(rng):
    n = 60
    y = rng.normal(size=n)
    x = rng.normal(size=(n, 2)) + y[:, None]
    d = PanelDataset(y, y.copy(), np.r_[np.zeros(40), np.ones(20)], x)
    rep = covariate_invariance(d, ["age", "dose"])
    assert np.all(rep.wald == 0) and not rep.reject.any()
    assert [r[:2] for r in rep.rows()][:3] == [("age", "intercept"), ("age", "linear"), ("age", "quadratic")]


def test_invariance_detects_shift(rng):
    n = 2000
    y0 = rng.normal(size=n)
    y1 = rng.normal(size=n)
    x = (y0 + rng.normal(size=n))[:, None]
    rep = covariate_invariance(PanelDataset(y0, y1, np.zeros(n), x))
    assert rep.reject[0, 1]


def test_invariance_edge_cases(rng):
    d = PanelDataset(rng.normal(size=30), rng.normal(size=30), np.zeros(30))
    assert covariate_invariance(d).wald.shape == (0, 3)
    few = PanelDataset(rng.normal(size=20), rng.normal(size=20), np.r_[np.zeros(9), np.ones(11)],
                       rng.normal(size=(20, 1)))
    with pytest.raises(ValidationError):
        covariate_invariance(few)
    binary = PanelDataset(rng.integers(0, 2, 40).astype(float), rng.integers(0, 2, 40).astype(float),
                          np.zeros(40), rng.normal(size=(40, 1)))
    with pytest.raises(ValidationError, match="three distinct"):
        covariate_invariance(binary)
