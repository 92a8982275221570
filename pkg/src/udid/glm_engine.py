"""Outcome-side likelihood fits and the tilt functional xi(x).

The pre-period model is f(y0 | a, x) proportional to h0(y0, x) exp{a beta(y0, x)}
with h0 an exponential family whose natural parameter is linear in (1, x).
Since beta is linear in (y, y^2), the whole model is again a natural
exponential family, so the log-likelihood is concave in the parameters

    theta = (zeta (1 + p), [phi], alpha)

where zeta are natural-scale coefficients on (1, x), phi is the Gaussian
precision, and alpha the odds-ratio coefficients. ``tau`` collects the
baseline parameters (intercept, and precision for Gaussian), ``gamma`` the
covariate slopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, gammaln, log_expit, logit

from ._solvers import newton_maximize, separating_direction
from .data_model import PanelDataset, as_contrast, contrast_eval
from .errors import ConvergenceError, DivergentTiltError, SeparationError
from .or_family import FamilySpec, LogLinear, get_family

FITTABLE = ("gaussian", "bernoulli", "poisson")
POISSON_TERM_TOL = 1e-14
POISSON_MAX_TERMS = 10**6


class AttEstimate(NamedTuple):
    psi0: float
    psi1: float
    effect: float


@dataclass(frozen=True)
class OutcomeFit:
    family: str
    tau: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray | None
    loglik: float
    converged: bool
    n_iter: int
    loglik_path: tuple = field(default=(), repr=False)

    @property
    def theta(self) -> np.ndarray:
        zeta = np.concatenate([self.tau[:1], self.gamma])
        parts = [zeta, self.tau[1:]] + ([self.alpha] if self.alpha is not None else [])
        return np.concatenate(parts)

    @property
    def variance(self) -> float:
        if self.family != "gaussian":
            raise AttributeError("variance is defined for Gaussian fits only")
        return 1.0 / self.tau[1]

    def natural(self, x) -> np.ndarray:
        """Natural parameter of y under the control arm at covariates ``x``."""
        return self.tau[0] + _as_rows(x, self.gamma.size) @ self.gamma

    def mean(self, x, a=0, spec: LogLinear | None = None) -> np.ndarray:
        """E(Y | A=a, X=x) implied by the fit."""
        if not a:
            return _tilted_mean(self, LogLinear(), None, x)
        if self.alpha is None or spec is None:
            raise ValueError("the treated-arm mean needs a pre-period fit and its odds-ratio spec")
        return _tilted_mean(self, spec, self.alpha, x)


def _as_rows(x, p):
    """Coerce covariates to shape (n, p); a 1-D vector of length p is one unit."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x
    return x.reshape(1, p) if x.size == p else x.reshape(-1, p)


def _unpack(theta, family, p, k):
    zeta = theta[: 1 + p]
    pos = 1 + p
    if family == "gaussian":
        tau = np.array([zeta[0], theta[pos]])
        pos += 1
    else:
        tau = zeta[:1].copy()
    alpha = theta[pos: pos + k] if k else None
    return tau, zeta[1:].copy(), alpha


class _NaturalGlm:
    """Weighted mean log-likelihood of a natural exponential-family model.

    T1 = G1 theta is the natural parameter of y; for Gaussian,
    T2 = G2 theta is the natural parameter of y^2 (must be negative).
    """

    def __init__(self, family, y, x, weights, L=None, Q=None, a=None):
        self.family = family
        self.y = np.asarray(y, dtype=float)
        n = self.y.size
        x = _as_rows(x, 0) if np.size(x) == 0 else np.asarray(x, dtype=float).reshape(n, -1)
        x = x.reshape(n, 0) if x.size == 0 else x
        self.p = x.shape[1]
        self.w = np.asarray(weights, dtype=float)
        self.rows = self.w > 0
        self.k = 0 if L is None else L.shape[1]
        ones = np.ones((n, 1))
        blocks1 = [ones, x]
        blocks2 = [np.zeros((n, 1 + self.p))]
        if family == "gaussian":
            blocks1.append(np.zeros((n, 1)))
            blocks2.append(np.full((n, 1), -0.5))
        if self.k:
            a = np.asarray(a, dtype=float)[:, None]
            blocks1.append(a * L)
            blocks2.append(a * Q)
        self.G1 = np.hstack(blocks1)
        self.G2 = np.hstack(blocks2) if family == "gaussian" else None
        if family != "gaussian" and Q is not None and np.any(Q != 0):
            raise ValueError("a quadratic odds-ratio term requires a Gaussian outcome")
        if family == "poisson":
            self.log_base = -gammaln(self.y + 1.0)
        elif family == "gaussian":
            self.log_base = np.full(n, -0.5 * np.log(2 * np.pi))
        else:
            self.log_base = np.zeros(n)

    @property
    def dim(self):
        return self.G1.shape[1]

    def _moments(self, theta):
        T1 = self.G1 @ theta
        if self.family == "gaussian":
            T2 = self.G2 @ theta
            return T1, T2
        return T1, None

    def loglik_obs(self, theta):
        T1, T2 = self._moments(theta)
        y = self.y
        if self.family == "gaussian":
            with np.errstate(divide="ignore", invalid="ignore"):
                ll = T1 * y + T2 * y**2 + T1**2 / (4 * T2) + 0.5 * np.log(-2 * T2)
            ll = np.where(T2 < 0, ll, -np.inf)
        elif self.family == "bernoulli":
            ll = y * T1 + log_expit(-T1)
        else:
            with np.errstate(over="ignore"):
                ll = y * T1 - np.exp(T1)
        return ll + self.log_base

    def score_obs(self, theta):
        """Per-unit score rows (unweighted), shape (n, dim)."""
        T1, T2 = self._moments(theta)
        if self.family == "gaussian":
            var = -0.5 / T2
            mu = T1 * var
            return (self.y - mu)[:, None] * self.G1 + (self.y**2 - mu**2 - var)[:, None] * self.G2
        mu = expit(T1) if self.family == "bernoulli" else np.exp(T1)
        return (self.y - mu)[:, None] * self.G1

    def objective(self, theta, derivs):
        ll = self.loglik_obs(theta)
        value = float(np.sum(self.w[self.rows] * ll[self.rows]))
        if not derivs:
            return value if np.isfinite(value) else -np.inf
        grad = self.score_obs(theta)[self.rows].T @ self.w[self.rows]
        T1, T2 = self._moments(theta)
        w = self.w
        if self.family == "gaussian":
            var = -0.5 / T2
            mu = T1 * var
            c11, c12, c22 = var, 2 * mu * var, 4 * mu**2 * var + 2 * var**2
            A, B = self.G1, self.G2
            hess = -((A * (w * c11)[:, None]).T @ A + (A * (w * c12)[:, None]).T @ B
                     + (B * (w * c12)[:, None]).T @ A + (B * (w * c22)[:, None]).T @ B)
        else:
            v = expit(T1) * (1 - expit(T1)) if self.family == "bernoulli" else np.exp(T1)
            hess = -(self.G1 * (w * v)[:, None]).T @ self.G1
        return value, grad, hess

    def start(self):
        rows, y = self.rows, self.y[self.rows]
        w = self.w[rows] / self.w[rows].sum()
        theta = np.zeros(self.dim)
        if self.family == "gaussian":
            X = self.G1[rows][:, : 1 + self.p]
            sw = np.sqrt(w)
            coef = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
            resid_var = float(np.sum(w * (y - X @ coef) ** 2))
            if resid_var <= 0:
                raise ConvergenceError("outcome has zero residual variance")
            theta[: 1 + self.p] = coef / resid_var
            theta[1 + self.p] = 1.0 / resid_var
        else:
            m = float(np.sum(w * y))
            if self.family == "bernoulli":
                theta[0] = logit(np.clip(m, 1e-6, 1 - 1e-6))
            else:
                theta[0] = np.log(max(m, 1e-6))
        return theta


def _fit(model: _NaturalGlm, names, block):
    res = newton_maximize(model.objective, model.start())
    suspicious = (not res.converged) or np.max(np.abs(model.G1[model.rows] @ res.x), initial=0) > 25
    if suspicious and model.family in ("bernoulli", "poisson"):
        j = int(np.argmax(np.abs(res.x)))
        if model.family == "bernoulli":
            direction = separating_direction(model.G1[model.rows], model.y[model.rows])
            if direction is not None:
                j = int(np.argmax(np.abs(direction)))
                raise SeparationError(f"likelihood unbounded along {names[j]}", names[j], block)
        elif not res.converged:
            raise SeparationError(f"likelihood unbounded along {names[j]}", names[j], block)
    if not res.converged:
        raise ConvergenceError("Newton iterations did not converge", block)
    return res


def _weights(n, rows=None, weights=None):
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).copy()
    if rows is not None:
        w = w * rows
    return w / np.sum(np.ones(n) if weights is None else weights)


def _param_names(family, p, spec, with_alpha):
    names = ["intercept"] + [f"x{j + 1}" for j in range(p)]
    if family == "gaussian":
        names.append("precision")
    if with_alpha:
        names += [f"alpha[{s}]" for s in spec.names(p)]
    return names


def _check_family(fam):
    fam = get_family(fam)
    if not fam.can_fit or fam.name not in FITTABLE:
        raise ValueError(f"family {fam.name!r} has no likelihood driver; fittable: {FITTABLE}")
    return fam


def pre_outcome_model(d: PanelDataset, fam, spec: LogLinear, weights=None) -> _NaturalGlm:
    fam = _check_family(fam)
    L, Q = spec.linear_quadratic(d.x)
    return _NaturalGlm(fam.name, d.y0, d.x, _weights(d.n, None, weights), L, Q, d.a)


def post_outcome_model(d: PanelDataset, fam, weights=None) -> _NaturalGlm:
    fam = _check_family(fam)
    return _NaturalGlm(fam.name, d.y1, d.x, _weights(d.n, d.a == 0, weights))


def fit_pre_outcome(d: PanelDataset, fam, spec: LogLinear | None = None, weights=None) -> OutcomeFit:
    """Maximum likelihood for the pre-period outcome model over (tau0, gamma0, alpha_OR)."""
    spec = spec or LogLinear(interact=d.p > 0)
    if not isinstance(spec, LogLinear):
        raise TypeError("the outcome likelihood needs a log-linear odds-ratio spec")
    model = pre_outcome_model(d, fam, spec, weights)
    res = _fit(model, _param_names(model.family, d.p, spec, True), "t0_or")
    tau, gamma, alpha = _unpack(res.x, model.family, d.p, model.k)
    return OutcomeFit(model.family, tau, gamma, alpha, res.value, True, res.n_iter, tuple(res.path))


def fit_post_outcome_control(d: PanelDataset, fam, weights=None) -> OutcomeFit:
    """Maximum likelihood for the post-period control-arm outcome model (tau1, gamma1)."""
    if np.sum(d.a == 0) < 2:
        raise ValueError("need at least two control units")
    model = post_outcome_model(d, fam, weights)
    res = _fit(model, _param_names(model.family, d.p, None, False), "t1_or")
    tau, gamma, _ = _unpack(res.x, model.family, d.p, 0)
    return OutcomeFit(model.family, tau, gamma, None, res.value, True, res.n_iter, tuple(res.path))


def _tilted_mean(fit: OutcomeFit, spec: LogLinear, alpha, x, delta=0.0):
    x = _as_rows(x, fit.gamma.size)
    T1 = fit.tau[0] + x @ fit.gamma
    T2 = -0.5 * fit.tau[1] if fit.family == "gaussian" else None
    if alpha is not None:
        L, Q = spec.linear_quadratic(x)
        T1 = T1 + L @ alpha + delta
        if fit.family == "gaussian":
            T2 = T2 + Q @ alpha
        elif np.any(Q @ alpha != 0):
            raise DivergentTiltError("quadratic tilt requires a Gaussian baseline")
    elif delta:
        T1 = T1 + delta
    if fit.family == "gaussian":
        if np.any(T2 >= 0):
            raise DivergentTiltError("tilted Gaussian has nonpositive precision")
        return -T1 / (2 * T2)
    if fit.family == "bernoulli":
        return expit(T1)
    with np.errstate(over="ignore"):
        out = np.exp(T1)
    if not np.all(np.isfinite(out)):
        raise DivergentTiltError("tilted Poisson mean overflows")
    return out


def xi_eval(fam, fit1: OutcomeFit, spec: LogLinear, alpha0, x, delta: float = 0.0) -> np.ndarray:
    """Tilt functional xi(x) = E[Y1 e^beta | A=0, x] / E[e^beta | A=0, x].

    ``delta`` adds delta * y to beta (the sensitivity departure). The
    Gaussian, Bernoulli and Poisson cases are exact: an exponential tilt of
    these families stays in the family, so no series is needed.
    """
    fam = get_family(fam)
    if fam.name != fit1.family:
        raise ValueError("family does not match the fitted model")
    return _tilted_mean(fit1, spec, np.asarray(alpha0, dtype=float), x, delta)


def poisson_tilt_mean_series(lam: float, c: float) -> float:
    """Poisson mean under the tilt e^{c y}, by direct summation of the series.

    Terms are added until the relative size falls below 1e-14; more than
    1e6 terms is treated as divergence.
    """
    log_term, total, weighted = 0.0, 0.0, 0.0
    ratio_log = np.log(lam) + c
    peak = -np.inf
    terms = []
    for y in range(POISSON_MAX_TERMS):
        if y:
            log_term += ratio_log - np.log(y)
        terms.append(log_term)
        peak = max(peak, log_term)
        if y > np.exp(ratio_log) and log_term - peak < np.log(POISSON_TERM_TOL):
            break
    else:
        raise DivergentTiltError("Poisson tilt series did not converge")
    logs = np.array(terms) - peak
    total = np.sum(np.exp(logs))
    weighted = np.sum(np.arange(len(terms)) * np.exp(logs))
    return float(weighted / total)


def conditional_stat_mean(fit0: OutcomeFit, spec: LogLinear, x) -> np.ndarray:
    """E[S0(Y0, X) | A=0, X] under the pre-period fit; shape (n, k)."""
    x = _as_rows(x, fit0.gamma.size)
    mu = _tilted_mean(fit0, spec, None, x)
    z = spec.z(x)
    out = (mu - spec.y_ref)[:, None] * z
    if spec.quadratic:
        var = 1.0 / fit0.tau[1]
        out = np.hstack([out, (var + (mu - spec.y_ref) ** 2)[:, None]])
    return out


def _wmean(values, rows, weights):
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=float)
    w = w * rows
    return float(np.sum(w * values) / np.sum(w))


def glm_att(d: PanelDataset, fam, fit0: OutcomeFit, fit1: OutcomeFit, spec: LogLinear,
            contrast="additive", weights=None, delta: float = 0.0) -> AttEstimate:
    """GLM plug-in: psi1 is the treated mean of y1, psi0 the treated mean of xi(x)."""
    xi = xi_eval(fam, fit1, spec, fit0.alpha, d.x, delta)
    return glm_att_from_xi(d, xi, contrast, weights)


def glm_att_from_xi(d: PanelDataset, xi, contrast="additive", weights=None) -> AttEstimate:
    treated = d.a == 1
    psi1 = _wmean(d.y1, treated, weights)
    psi0 = _wmean(np.asarray(xi, dtype=float), treated, weights)
    return AttEstimate(psi0, psi1, contrast_eval(as_contrast(contrast), psi0, psi1)[0])


def decompose_att(crude: float, psi0: float, mean_ctrl_y1: float):
    """Split the ATT into the crude contrast and the de-biasing term."""
    return crude, psi0 - mean_ctrl_y1


def scale_debias_terms(mu00: float, mu01: float, sigma2_0: float, sigma2_1: float):
    """Return (parallel-trends term, odds-ratio term) for shared-variance Gaussians."""
    if sigma2_0 <= 0:
        raise ValueError("sigma2_0 must be positive")
    gap = mu01 - mu00
    return gap, sigma2_1 / sigma2_0 * gap


def poisson_mult_att(crude_ratio: float, lam00: float, lam01: float) -> float:
    if min(crude_ratio, lam00, lam01) <= 0:
        raise ValueError("rates must be positive")
    return crude_ratio * lam00 / lam01


def binary_or_att(crude_or: float, p00: float, p01: float) -> float:
    for p in (p00, p01):
        if not 0 < p < 1:
            raise ValueError("probabilities must lie in (0, 1)")
    if crude_or <= 0:
        raise ValueError("odds ratio must be positive")
    return crude_or * p00 * (1 - p01) / (p01 * (1 - p00))


def orec_impute_binary(p00: float, p01: float, p10: float) -> float:
    """E(Y1 untreated | A=1) for a binary outcome when the log odds ratio is stable.

    ``p00 = P(Y0=1|A=0)``, ``p01 = P(Y1=1|A=0)``, ``p10 = P(Y0=1|A=1)``; the
    result is odds(p01) * odds(p10) / odds(p00) mapped back to a probability.
    """
    for p in (p00, p01, p10):
        if not 0 < p < 1:
            raise ValueError("probabilities must lie in (0, 1)")
    odds = p10 / (1 - p10) * (p01 * (1 - p00)) / (p00 * (1 - p01))
    return odds / (1 + odds)
