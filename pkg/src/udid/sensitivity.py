"""Sensitivity to departures from equal odds-ratio functions, and covariate checks.

A departure adds ``(d_prime / sigma_y) * y`` to the post-period log odds
ratio, where ``sigma_y`` is the control-arm sample SD of Y1; so
``d_prime`` is roughly the SD of the induced log-odds shift. Only the
post-period blocks (the tilt functional and the post-period propensity
equation) see the shift; pre-period fits are solved once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .data_model import PanelDataset
from .errors import UdidError, ValidationError
from .estimators import StackFit, StackModel, UdidModel

WALD_LEVEL = 0.95
WALD_THRESHOLD = float(chi2.ppf(WALD_LEVEL, 1))  # 3.8415
DEFAULT_GRID = np.linspace(-2.0, 2.0, 81)


@dataclass
class SensitivityCurve:
    estimator: str
    grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    converged: np.ndarray
    sigma_y: float
    breakdown_nonsig: dict = field(default_factory=dict)
    breakdown_zero: dict = field(default_factory=dict)

    def rows(self):
        for i, dp in enumerate(self.grid):
            yield (float(dp), float(self.estimate[i]), float(self.se[i]), float(self.ci_lo[i]),
                   float(self.ci_hi[i]), bool(self.converged[i]))


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if not np.any(grid == 0.0):
        raise ValueError("grid must contain 0")
    return grid


def _walk(grid, ok, zero_idx, step):
    """Indices from the zero point outward in one direction, keeping converged points."""
    idx = range(zero_idx, grid.size) if step > 0 else range(zero_idx, -1, -1)
    return [i for i in idx if ok[i]]


def _breakdowns(curve: SensitivityCurve):
    zero_idx = int(np.flatnonzero(curve.grid == 0.0)[0])
    for name, step in (("positive", 1), ("negative", -1)):
        path = _walk(curve.grid, curve.converged, zero_idx, step)
        nonsig = None
        for i in path:
            if curve.ci_lo[i] <= 0 <= curve.ci_hi[i]:
                nonsig = float(curve.grid[i])
                break
        crossing = None
        for i, j in zip(path, path[1:]):
            e_i, e_j = curve.estimate[i], curve.estimate[j]
            if e_i == 0:
                crossing = float(curve.grid[i])
                break
            if np.sign(e_i) != np.sign(e_j):
                g_i, g_j = curve.grid[i], curve.grid[j]
                crossing = float(g_i + (g_j - g_i) * e_i / (e_i - e_j))
                break
        curve.breakdown_nonsig[name] = nonsig
        curve.breakdown_zero[name] = crossing


def sensitivity_sweep(model: StackModel, estimator: str = "dr", grid=None,
                      base: StackFit | None = None) -> SensitivityCurve:
    """Re-solve the post-period blocks of ``model`` along a grid of ``d_prime``.

    ``model`` is a :class:`UdidModel` or :class:`DiscretizedModel`. Points that
    fail to solve are recorded with ``converged=False`` and NaN values.
    """
    grid = _check_grid(DEFAULT_GRID if grid is None else grid)
    if estimator not in model.estimators:
        raise ValueError(f"estimator {estimator!r} is not enabled on this model")
    if base is None:
        base = model.fit()
    base_rep = base[estimator]
    if not base_rep.converged:
        raise UdidError(f"base fit failed: {base_rep.diagnostics.get('error')}")
    d = model.d
    sigma_y = float(np.std(d.y1[d.a == 0], ddof=1))
    if not sigma_y > 0:
        raise ValidationError([("control post-period outcome is constant", [])])
    sub = type(model).__new__(type(model))
    sub.__dict__.update(model.__dict__)
    sub.estimators = (estimator,)
    k = grid.size
    est, se, lo, hi = (np.full(k, np.nan) for _ in range(4))
    ok = np.zeros(k, dtype=bool)
    for i, dp in enumerate(grid):
        if dp == 0.0:
            rep = base_rep
        else:
            rep = sub.fit(dp / sigma_y, base)[estimator]
        if rep.converged:
            est[i], se[i], lo[i], hi[i], ok[i] = rep.estimate, rep.se, rep.ci_lo, rep.ci_hi, True
    curve = SensitivityCurve(estimator, grid, est, se, lo, hi, ok, sigma_y)
    _breakdowns(curve)
    return curve


def sweep_udid(d: PanelDataset, estimator: str = "dr", grid=None, family="gaussian", spec=None,
               contrast="additive", level: float = 0.95) -> SensitivityCurve:
    model = UdidModel(d, family, spec, contrast, level, (estimator,))
    return sensitivity_sweep(model, estimator, grid)


@dataclass
class InvarianceReport:
    covariates: list
    terms: tuple
    wald: np.ndarray  # (p, 3)
    reject: np.ndarray
    threshold: float = WALD_THRESHOLD
    note: str = ("paired HC2 sandwich: both periods share the same control units, so the "
                 "cross-period covariance enters the Wald variance")

    def rows(self):
        for j, name in enumerate(self.covariates):
            for k, term in enumerate(self.terms):
                yield name, term, float(self.wald[j, k]), bool(self.reject[j, k])


def covariate_invariance(d: PanelDataset, names=None) -> InvarianceReport:
    """Wald tests that each covariate's quadratic regression on Y_t is the same at t=0 and t=1.

    On control units, X_j is regressed on (1, Y_t, Y_t^2) separately per period;
    the six coefficients share one sandwich covariance.
    """
    ctrl = d.a == 0
    n_ctrl = int(ctrl.sum())
    if n_ctrl < 10:
        raise ValidationError([(f"need at least 10 control units, found {n_ctrl}", [])])
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(d.p)]
    terms = ("intercept", "linear", "quadratic")
    if d.p == 0:
        return InvarianceReport([], terms, np.zeros((0, 3)), np.zeros((0, 3), dtype=bool))
    designs = []
    for y in (d.y0[ctrl], d.y1[ctrl]):
        W = np.column_stack([np.ones(n_ctrl), y, y**2])
        if np.linalg.matrix_rank(W) < 3:
            raise ValidationError([("outcome takes fewer than three distinct values among controls", [])])
        designs.append(W)
    X = d.x[ctrl]
    inverses = [np.linalg.inv(W.T @ W) for W in designs]
    # HC2 leverage adjustment; plain HC0 over-rejects with quadratic regressors at n ~ 300.
    shrink = [np.sqrt(1.0 - np.sum((W @ inv) * W, axis=1)) for W, inv in zip(designs, inverses)]
    wald = np.zeros((d.p, 3))
    for j in range(d.p):
        coefs, influence = [], []
        for W, inv, s in zip(designs, inverses, shrink):
            b = inv @ (W.T @ X[:, j])
            coefs.append(b)
            influence.append((W * ((X[:, j] - W @ b) / s)[:, None]) @ inv.T)
        # Same units in both periods: the cross-period covariance enters through the difference.
        var = np.sum((influence[0] - influence[1]) ** 2, axis=0)
        diff = coefs[0] - coefs[1]
        scale = np.maximum(np.abs(coefs[0]), 1.0)
        for k in range(3):
            if abs(diff[k]) > 1e-12 * scale[k]:
                wald[j, k] = diff[k] ** 2 / var[k]
    return InvarianceReport(names, terms, wald, wald > WALD_THRESHOLD)
