"""Doubly robust pieces: the odds-ratio moment for alpha0 and the DR mean for psi0.

Robustness covers the outcome model and the extended propensity model only;
the odds-ratio model itself must be correctly specified. No runtime check
can detect a wrong odds-ratio basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._solvers import newton_root
from .data_model import PanelDataset, as_contrast, contrast_eval
from .errors import ConvergenceError
from .glm_engine import AttEstimate, OutcomeFit, conditional_stat_mean
from .or_family import LogLinear, beta_eval


@dataclass(frozen=True)
class DrInputs:
    """Nuisance values evaluated per unit.

    pi0_ref : baseline treatment probability at y = y_ref, from eta0.
    m0 : E[S0(Y0, X) | A=0, X] from the pre-period outcome fit, shape (n, k).
    """

    pi0_ref: np.ndarray
    m0: np.ndarray


def dr_inputs(d: PanelDataset, spec: LogLinear, eta0, fit0: OutcomeFit) -> DrInputs:
    x1 = np.hstack([np.ones((d.n, 1)), d.x])
    return DrInputs(expit(x1 @ np.asarray(eta0, dtype=float)), conditional_stat_mean(fit0, spec, d.x))


def or_moment_obs(d: PanelDataset, spec: LogLinear, alpha, pi0_ref, m0) -> np.ndarray:
    """Per-unit odds-ratio moment rows, shape (n, k)."""
    S = spec.stat(d.y0, d.x)
    with np.errstate(over="ignore"):
        tilt = np.exp(-(S @ np.asarray(alpha, dtype=float)) * d.a)
    return ((d.a - pi0_ref) * tilt)[:, None] * (S - m0)


def solve_alpha_dr(d: PanelDataset, spec: LogLinear, pi0_ref, m0, start=None, weights=None) -> np.ndarray:
    """Root of the mean odds-ratio moment by damped Newton.

    ``pi0_ref`` and ``m0`` are per-unit arrays (see :func:`dr_inputs`);
    scalars and single rows broadcast.
    """
    pi0_ref = np.broadcast_to(np.asarray(pi0_ref, dtype=float), (d.n,))
    k = spec.dim(d.p)
    m0 = np.broadcast_to(np.asarray(m0, dtype=float).reshape(-1, k), (d.n, k))
    w = np.full(d.n, 1.0 / d.n) if weights is None else np.asarray(weights, float) / np.sum(weights)

    def moment(alpha):
        return or_moment_obs(d, spec, alpha, pi0_ref, m0).T @ w

    x0 = np.zeros(k) if start is None else np.asarray(start, dtype=float)
    res = newton_root(moment, x0)
    if not res.converged and start is not None:
        res = newton_root(moment, np.zeros(k))
    if not res.converged:
        raise ConvergenceError("odds-ratio moment has no root within tolerance", "odds_ratio")
    return res.x


def dr_att(d: PanelDataset, spec, alpha0, eta1, xi, contrast="additive", weights=None,
           delta: float = 0.0) -> AttEstimate:
    """Doubly robust psi0 combining the odds weights and the tilt functional xi."""
    w = np.ones(d.n) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    p_trt = float(np.sum(w * d.a))
    if p_trt <= 0:
        raise ValueError("no treated mass")
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (d.n,))
    x1 = np.hstack([np.ones((d.n, 1)), d.x])
    log_odds = x1 @ np.asarray(eta1, dtype=float) + beta_eval(spec.with_alpha(alpha0), d.y1, d.x) + delta * d.y1
    ctrl = d.a == 0
    odds = np.zeros(d.n)
    odds[ctrl] = np.exp(log_odds[ctrl])
    terms = (1 - d.a) * odds * (d.y1 - xi) + d.a * xi
    psi0 = float(np.sum(w * terms) / p_trt)
    psi1 = float(np.sum(w * d.a * d.y1) / p_trt)
    return AttEstimate(psi0, psi1, contrast_eval(as_contrast(contrast), psi0, psi1)[0])
