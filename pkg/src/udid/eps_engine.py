"""Extended propensity score: P(A=1 | Y_t untreated = y, X = x).

The model is logit pi_t(y, x) = (1, x') eta_t + beta(y, x) with the odds-ratio
function shared across periods. At t=0 it is an ordinary logistic
regression of A on (1, X, S0(Y0, X)). At t=1 the outcome under no treatment
is unobserved for treated units, so eta_1 is the root of

    mean[ (1, X) * {(1 - A)(1 + exp((1, X) eta_1 + beta(Y1, X))) - 1} ] = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._solvers import logistic_mle, newton_root
from .data_model import PanelDataset, as_contrast, contrast_eval
from .errors import ConvergenceError, SingularMatrixError, ValidationError
from .glm_engine import AttEstimate
from .or_family import LogLinear, beta_eval


@dataclass(frozen=True)
class EpsFit:
    eta: np.ndarray
    alpha_ps: np.ndarray | None
    converged: bool
    n_iter: int = 0
    loglik: float = float("nan")


def _design_x(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _weights(n, weights):
    return np.ones(n) if weights is None else np.asarray(weights, dtype=float)


def pre_eps_design(d: PanelDataset, spec: LogLinear) -> np.ndarray:
    return np.hstack([_design_x(d.x), spec.stat(d.y0, d.x)])


def fit_pre_eps(d: PanelDataset, spec: LogLinear | None = None, weights=None) -> EpsFit:
    """Logistic regression of A on (1, X, S0(Y0, X))."""
    spec = spec or LogLinear(interact=d.p > 0)
    design = pre_eps_design(d, spec)
    w = _weights(d.n, weights)
    rank = np.linalg.matrix_rank(design[w > 0])
    if rank < design.shape[1]:
        raise SingularMatrixError(f"propensity design has rank {rank} < {design.shape[1]} columns")
    names = ["intercept"] + [f"x{j + 1}" for j in range(d.p)] + [f"alpha[{s}]" for s in spec.names(d.p)]
    fit = logistic_mle(design, d.a, w, names)
    return EpsFit(fit.coef[: 1 + d.p], fit.coef[1 + d.p:], fit.converged, fit.n_iter, fit.loglik)


def _log_odds1(d, spec, alpha0, eta1, delta):
    beta = beta_eval(spec.with_alpha(alpha0), d.y1, d.x)
    return _design_x(d.x) @ eta1 + beta + delta * d.y1


def eta1_moment_obs(d: PanelDataset, spec, alpha0, eta1, delta=0.0) -> np.ndarray:
    """Per-unit contributions to the t=1 propensity moment; shape (n, 1 + p)."""
    with np.errstate(over="ignore"):
        odds = np.exp(_log_odds1(d, spec, alpha0, eta1, delta))
    resid = (1 - d.a) * (1 + odds) - 1
    return _design_x(d.x) * resid[:, None]


def solve_eta1(d: PanelDataset, spec, alpha0, weights=None, delta: float = 0.0) -> np.ndarray:
    """Root of the t=1 propensity moment by damped Newton (numeric Jacobian)."""
    if np.sum(d.a == 0) < 1 + d.p:
        raise ValueError("fewer control units than propensity parameters")
    w = _weights(d.n, weights)
    w = w / w.sum()
    n_trt = float(np.sum(w * d.a))
    ctrl = d.a == 0
    # start: intercept that solves the moment with the covariate slopes at 0
    with np.errstate(over="ignore"):
        base = _log_odds1(d, spec, alpha0, np.zeros(1 + d.p), delta)
    shift = np.max(base[ctrl])
    start = np.zeros(1 + d.p)
    start[0] = np.log(n_trt) - shift - np.log(np.sum(w[ctrl] * np.exp(base[ctrl] - shift)))

    def moment(eta):
        return eta1_moment_obs(d, spec, alpha0, eta, delta).T @ w

    try:
        res = newton_root(moment, start)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"[t1_ps] {exc}") from exc
    if not res.converged:
        raise ConvergenceError("t=1 propensity moment has no root within tolerance", "t1_ps")
    return res.x


def ipw_weights(d: PanelDataset, spec, alpha0, eta1, delta: float = 0.0) -> np.ndarray:
    """Control-unit odds weights, rescaled so the largest equals 1 (ratio-invariant)."""
    logw = _log_odds1(d, spec, alpha0, eta1, delta)
    ctrl = d.a == 0
    out = np.zeros(d.n)
    out[ctrl] = np.exp(logw[ctrl] - np.max(logw[ctrl]))
    return out


def ipw_att(d: PanelDataset, spec, alpha0, eta1, contrast="additive", weights=None,
            delta: float = 0.0) -> AttEstimate:
    """Odds-weighted control mean of y1 for psi0; treated mean of y1 for psi1."""
    base = _weights(d.n, weights)
    w = ipw_weights(d, spec, alpha0, eta1, delta) * base
    if not np.sum(w) > 0:
        raise ValidationError([("all inverse-probability weights underflow to zero", [])])
    psi0 = float(np.sum(w * d.y1) / np.sum(w))
    trt = base * (d.a == 1)
    psi1 = float(np.sum(trt * d.y1) / np.sum(trt))
    return AttEstimate(psi0, psi1, contrast_eval(as_contrast(contrast), psi0, psi1)[0])
