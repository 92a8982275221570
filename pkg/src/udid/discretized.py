"""Discretized odds-ratio estimation.

The outcome is cut into M quantile bins of the pre-period outcome and the
log odds ratio is taken to be constant within a bin: beta(y, x) = Z(x)' alpha_{B(y)}
with bin 1 as the reference. Pre-period models are baseline-category
multinomial logits for the bin; the post-period control outcome is
Gaussian by default, in which case xi(x) has a closed form in truncated
normal moments. For genuinely discrete outcomes the post-period baseline
can instead be a multinomial model for the bin plus within-bin control means.

Cutpoints are computed once from the pre-period outcome and treated as fixed
in the sandwich.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from ._solvers import logistic_mle, multinomial_mle, multinomial_probs, newton_root
from .data_model import PanelDataset
from .dr_engine import dr_att
from .eps_engine import eta1_moment_obs, solve_eta1
from .errors import ConvergenceError, DivergentTiltError, ValidationError
from .estimators import StackModel, _outcome
from .glm_engine import OutcomeFit, _as_rows, fit_post_outcome_control, post_outcome_model
from .mestim import MomentBlock
from .or_family import Discretized, bin_assign, make_cutpoints

DEFAULT_M = 10


def _x1(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _z(x, interact):
    return _x1(x) if interact else np.ones((x.shape[0], 1))


@dataclass(frozen=True)
class MultinomialPre:
    """Pre-period bin model: rows are bins 2..M."""

    cutpoints: np.ndarray
    tau0: np.ndarray  # (M-1, 1+p)
    alpha_or: np.ndarray  # (M-1, p_z)
    interact: bool
    converged: bool = True

    @property
    def M(self):
        return self.cutpoints.size + 1

    def probs(self, a, x) -> np.ndarray:
        """P(B = m | A=a, X=x) for m = 1..M, shape (n, M)."""
        x = np.asarray(x, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0],))
        design = np.hstack([_x1(x), a[:, None] * _z(x, self.interact)])
        return multinomial_probs(design, np.hstack([self.tau0, self.alpha_or]))


def _check_bins(bins, M, rows, label):
    counts = np.bincount(bins[rows] - 1, minlength=M)
    empty = np.flatnonzero(counts == 0) + 1
    if empty.size:
        raise ValidationError([(f"empty {label} bins {empty.tolist()}", [])])


def fit_multinomial_pre(d: PanelDataset, cutpoints, interact: bool = False, weights=None) -> MultinomialPre:
    """Baseline-category logit of B(Y0) on (1, X, A * Z)."""
    cutpoints = np.asarray(cutpoints, dtype=float)
    M = cutpoints.size + 1
    bins = bin_assign(cutpoints, d.y0)
    w = np.ones(d.n) if weights is None else np.asarray(weights, dtype=float)
    _check_bins(bins, M, w > 0, "pre-period")
    z = _z(d.x, interact)
    design = np.hstack([_x1(d.x), d.a[:, None] * z])
    fit = multinomial_mle(design, bins - 1, M, w)
    return MultinomialPre(cutpoints, fit.coef[:, : 1 + d.p], fit.coef[:, 1 + d.p:], interact,
                          fit.converged)


def pre_ps_design(d: PanelDataset, cutpoints, interact: bool) -> np.ndarray:
    bins = bin_assign(cutpoints, d.y0)
    z = _z(d.x, interact)
    M = len(cutpoints) + 1
    cols = [(bins == m)[:, None] * z for m in range(2, M + 1)]
    return np.hstack([_x1(d.x)] + cols)


def fit_pre_eps_discretized(d: PanelDataset, cutpoints, interact: bool = False, weights=None):
    """Logistic regression of A on (1, X, 1{B(Y0)=m} Z for m >= 2); returns (eta0, alpha_ps)."""
    design = pre_ps_design(d, cutpoints, interact)
    fit = logistic_mle(design, d.a, weights)
    pz = _z(d.x, interact).shape[1]
    return fit.coef[: 1 + d.p], fit.coef[1 + d.p:].reshape(len(cutpoints), pz)


def truncated_terms(mu, sigma2, cutpoints):
    """Q1 (bin probabilities) and Q2 (density differences) for N(mu, sigma2); shape (n, M)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sd = np.sqrt(sigma2)
    edges = np.concatenate([[-np.inf], np.asarray(cutpoints, dtype=float), [np.inf]])
    std = (edges[None, :] - mu[:, None]) / sd
    # Compute upper-tail differences where both edges are above the mean to avoid cancellation.
    lower, upper = std[:, :-1], std[:, 1:]
    q1 = np.where(lower > 0, ndtr(-lower) - ndtr(-upper), ndtr(upper) - ndtr(lower))
    with np.errstate(over="ignore"):
        dens = np.exp(-0.5 * std**2) / (sd * np.sqrt(2 * np.pi))
    dens[~np.isfinite(std)] = 0.0
    q2 = dens[:, 1:] - dens[:, :-1]
    return q1, q2


def xi_discretized_gaussian(fit1: OutcomeFit, cutpoints, alpha_bins, x, interact: bool = False,
                            delta: float = 0.0) -> np.ndarray:
    """Tilt functional for a Gaussian post-period baseline and per-bin tilts.

    ``delta`` adds delta * y to the log odds ratio; within a Gaussian that only
    moves the mean to mu + delta * sigma^2.
    """
    if fit1.family != "gaussian":
        raise ValueError("needs a Gaussian post-period fit")
    sigma2 = fit1.variance
    if not sigma2 > 0:
        raise DivergentTiltError("post-period variance must be positive")
    x = _as_rows(x, fit1.gamma.size)
    mu = fit1.natural(x) * sigma2 + delta * sigma2
    q1, q2 = truncated_terms(mu, sigma2, cutpoints)
    z = _z(x, interact)
    alpha = np.asarray(alpha_bins, dtype=float).reshape(len(cutpoints), z.shape[1])
    logits = np.column_stack([np.zeros(z.shape[0]), z @ alpha.T])
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    num = np.sum(w * (mu[:, None] * q1 - sigma2 * q2), axis=1)
    den = np.sum(w * q1, axis=1)
    return num / den


@dataclass(frozen=True)
class MultinomialPost:
    """Post-period control bin model: coefficients for bins 2..M plus within-bin means."""

    tau1: np.ndarray  # (M-1, 1+p)
    bin_means: np.ndarray  # (M,)


def fit_multinomial_post(d: PanelDataset, cutpoints, weights=None) -> MultinomialPost:
    cutpoints = np.asarray(cutpoints, dtype=float)
    M = cutpoints.size + 1
    bins = bin_assign(cutpoints, d.y1)
    w = np.ones(d.n) if weights is None else np.asarray(weights, dtype=float)
    w = w * (d.a == 0)
    _check_bins(bins, M, w > 0, "post-period control")
    fit = multinomial_mle(_x1(d.x), bins - 1, M, w)
    means = np.array([np.sum(w * d.y1 * (bins == m)) / np.sum(w * (bins == m)) for m in range(1, M + 1)])
    return MultinomialPost(fit.coef, means)


def xi_discretized_multinomial(post: MultinomialPost, alpha_bins, x, interact: bool = False,
                               delta: float = 0.0) -> np.ndarray:
    x = _as_rows(x, post.tau1.shape[1] - 1)
    probs = multinomial_probs(_x1(x), post.tau1)
    z = _z(x, interact)
    alpha = np.asarray(alpha_bins, dtype=float).reshape(post.tau1.shape[0], z.shape[1])
    logits = np.column_stack([np.zeros(z.shape[0]), z @ alpha.T]) + delta * post.bin_means
    w = probs * np.exp(logits - logits.max(axis=1, keepdims=True))
    return (w @ post.bin_means) / w.sum(axis=1)


def dr_moment_discretized_obs(d: PanelDataset, cutpoints, alpha_bins, eta0, pre: MultinomialPre):
    """Per-unit discretized odds-ratio moment rows, shape (n, (M-1) p_z)."""
    M = len(cutpoints) + 1
    bins = bin_assign(cutpoints, d.y0)
    z = _z(d.x, pre.interact)
    alpha = np.asarray(alpha_bins, dtype=float).reshape(M - 1, z.shape[1])
    table = np.vstack([np.zeros(z.shape[1]), alpha])
    beta = np.sum(z * table[bins - 1], axis=1)
    pi0 = expit(_x1(d.x) @ np.asarray(eta0, dtype=float))
    with np.errstate(over="ignore"):
        lead = (d.a - pi0) * np.exp(-d.a * beta)
    probs = pre.probs(0.0, d.x)[:, 1:]
    onehot = (bins[:, None] == np.arange(2, M + 1)[None, :]).astype(float)
    resid = onehot - probs
    return (lead[:, None, None] * resid[:, :, None] * z[:, None, :]).reshape(d.n, -1)


def dr_alpha_discretized(d: PanelDataset, cutpoints, eta0, pre: MultinomialPre, start=None,
                         weights=None) -> np.ndarray:
    """Per-bin doubly robust odds-ratio roots, shape (M-1, p_z)."""
    M = len(cutpoints) + 1
    pz = _z(d.x, pre.interact).shape[1]
    ctrl_bins = bin_assign(cutpoints, d.y0)
    _check_bins(ctrl_bins, M, d.a == 0, "pre-period control")
    w = np.full(d.n, 1.0 / d.n) if weights is None else np.asarray(weights, float) / np.sum(weights)

    def moment(flat):
        return dr_moment_discretized_obs(d, cutpoints, flat, eta0, pre).T @ w

    x0 = np.zeros((M - 1) * pz) if start is None else np.asarray(start, dtype=float).ravel()
    res = newton_root(moment, x0)
    if not res.converged:
        raise ConvergenceError("discretized odds-ratio moment has no root", "odds_ratio")
    return res.x.reshape(M - 1, pz)


class DiscretizedModel(StackModel):
    """GLM, IPW and doubly robust UDiD with a binned odds-ratio function.

    Parameters
    ----------
    d : panel.
    M : number of bins (2..50), ignored when ``cutpoints`` is given.
    cutpoints : explicit bin boundaries; default quantiles of y0.
    interact : Z(x) = (1, x') instead of the constant 1.
    post : ``"gaussian"`` (default) or ``"multinomial"`` post-period baseline.
    """

    estimator_blocks = {
        "glm": ("effect0_glm", "effect1", "t0_or", "t1_or"),
        "ipw": ("effect0_ipw", "effect1", "t0_ps", "t1_ps_ipw"),
        "dr": ("effect0_dr", "effect1", "t0_or", "t0_ps", "odds_ratio", "t1_or", "t1_ps_dr"),
    }
    renames = {
        "glm": {"psi0_glm": "psi0"},
        "ipw": {"psi0_ipw": "psi0", "eta1_ipw": "eta1"},
        "dr": {"psi0_dr": "psi0", "eta1_dr": "eta1"},
    }
    delta_free = frozenset({"t0_or", "t0_ps", "odds_ratio", "t1_or", "effect1"})

    def __init__(self, d: PanelDataset, M: int = DEFAULT_M, cutpoints=None, interact: bool = False,
                 post: str = "gaussian", contrast="additive", level: float = 0.95, estimators=None):
        super().__init__(d, contrast, level, estimators)
        if cutpoints is None:
            if not 2 <= M <= 50:
                raise ValueError("M must lie in 2..50")
            cutpoints = make_cutpoints(self.d.y0, M)
        self.cutpoints = np.asarray(cutpoints, dtype=float)
        self.M = self.cutpoints.size + 1
        if np.unique(self.cutpoints).size < self.cutpoints.size:
            raise ValidationError([("tied cutpoints leave empty bins", [])])
        if post not in ("gaussian", "multinomial"):
            raise ValueError("post must be 'gaussian' or 'multinomial'")
        self.post = post
        self.interact = interact
        self.spec = Discretized(self.cutpoints, None, interact)
        d = self.d
        self._z = _z(d.x, interact)
        self.pz = self._z.shape[1]
        self._bins0 = bin_assign(self.cutpoints, d.y0)
        self._bins1 = bin_assign(self.cutpoints, d.y1)
        _check_bins(self._bins0, self.M, np.ones(d.n, dtype=bool), "pre-period")
        self._onehot0 = (self._bins0[:, None] == np.arange(2, self.M + 1)).astype(float)
        self._onehot1 = (self._bins1[:, None] == np.arange(1, self.M + 1)).astype(float)
        self._pre_design = np.hstack([_x1(d.x), d.a[:, None] * self._z])
        self._ps_design = pre_ps_design(d, self.cutpoints, interact)
        if post == "gaussian":
            self._m1 = post_outcome_model(d, "gaussian")

    def param_sizes(self):
        p, K = self.d.p, self.M - 1
        sizes = {"psi0_glm": 1, "psi0_ipw": 1, "psi0_dr": 1, "psi1": 1, "tau0": K * (1 + p),
                 "alpha_or": K * self.pz, "eta0": 1 + p, "alpha_ps": K * self.pz,
                 "alpha0": K * self.pz, "eta1_ipw": 1 + p, "eta1_dr": 1 + p}
        if self.post == "gaussian":
            sizes.update(tau1=2, gamma1=p)
        else:
            sizes.update(tau1=K * (1 + p), binmeans1=self.M)
        return sizes

    def _pre(self, s) -> MultinomialPre:
        K, p = self.M - 1, self.d.p
        return MultinomialPre(self.cutpoints, s["tau0"].reshape(K, 1 + p),
                              s["alpha_or"].reshape(K, self.pz), self.interact)

    def _xi(self, s, alpha, delta):
        if self.post == "gaussian":
            fit1 = _outcome("gaussian", s["tau1"], s["gamma1"])
            return xi_discretized_gaussian(fit1, self.cutpoints, alpha, self.d.x, self.interact, delta)
        post = MultinomialPost(s["tau1"].reshape(self.M - 1, 1 + self.d.p), s["binmeans1"])
        return xi_discretized_multinomial(post, alpha, self.d.x, self.interact, delta)

    def _alpha(self, flat):
        return np.asarray(flat).reshape(self.M - 1, self.pz)

    def _odds(self, eta1, alpha, delta):
        d = self.d
        table = np.vstack([np.zeros(self.pz), self._alpha(alpha)])
        beta = np.sum(self._z * table[self._bins1 - 1], axis=1)
        log_odds = _x1(d.x) @ eta1 + beta + delta * d.y1
        with np.errstate(over="ignore"):
            return np.where(d.a == 0, np.exp(np.where(d.a == 0, log_odds, 0.0)), 0.0)

    def blocks(self, delta):
        d, A, K, p = self.d, self.d.a, self.M - 1, self.d.p
        spec = self.spec

        def pre_rows(s):
            coef = np.hstack([s["tau0"].reshape(K, 1 + p), s["alpha_or"].reshape(K, self.pz)])
            probs = multinomial_probs(self._pre_design, coef)[:, 1:]
            R = (self._onehot0 - probs)[:, :, None] * self._pre_design[:, None, :]
            return np.hstack([R[:, :, : 1 + p].reshape(d.n, -1), R[:, :, 1 + p:].reshape(d.n, -1)])

        def pre_solve(s):
            fit = fit_multinomial_pre(d, self.cutpoints, self.interact)
            return {"tau0": fit.tau0.ravel(), "alpha_or": fit.alpha_or.ravel()}

        def ps_rows(s):
            coef = np.concatenate([s["eta0"], s["alpha_ps"]])
            return self._ps_design * (A - expit(self._ps_design @ coef))[:, None]

        def ps_solve(s):
            eta0, alpha_ps = fit_pre_eps_discretized(d, self.cutpoints, self.interact)
            return {"eta0": eta0, "alpha_ps": alpha_ps.ravel()}

        def or_rows(s):
            return dr_moment_discretized_obs(d, self.cutpoints, s["alpha0"], s["eta0"], self._pre(s))

        def or_solve(s):
            root = dr_alpha_discretized(d, self.cutpoints, s["eta0"], self._pre(s), start=s["alpha_or"])
            return {"alpha0": root.ravel()}

        if self.post == "gaussian":
            post_params = ("tau1", "gamma1")

            def post_rows(s):
                theta = np.concatenate([s["tau1"][:1], s["gamma1"], s["tau1"][1:]])
                rows = self._m1.score_obs(theta)
                cols = [0, 1 + p] + list(range(1, 1 + p))
                return (A == 0)[:, None] * rows[:, cols]

            def post_solve(s):
                fit = fit_post_outcome_control(d, "gaussian")
                return {"tau1": fit.tau, "gamma1": fit.gamma}
        else:
            post_params = ("tau1", "binmeans1")
            x1 = _x1(d.x)

            def post_rows(s):
                probs = multinomial_probs(x1, s["tau1"].reshape(K, 1 + p))[:, 1:]
                R = (self._onehot1[:, 1:] - probs)[:, :, None] * x1[:, None, :]
                means = self._onehot1 * (d.y1[:, None] - s["binmeans1"][None, :])
                return (A == 0)[:, None] * np.hstack([R.reshape(d.n, -1), means])

            def post_solve(s):
                fit = fit_multinomial_post(d, self.cutpoints)
                return {"tau1": fit.tau1.ravel(), "binmeans1": fit.bin_means}

        def eta_block(name, alpha_name):
            return MomentBlock(
                f"t1_ps_{name}", (f"eta1_{name}",),
                lambda s: eta1_moment_obs(d, spec, self._alpha(s[alpha_name]), s[f"eta1_{name}"], delta),
                depends=(alpha_name,),
                solve=lambda s: {f"eta1_{name}": solve_eta1(d, spec, self._alpha(s[alpha_name]),
                                                            delta=delta)})

        def glm_rows(s):
            return A * (self._xi(s, s["alpha_or"], delta) - s["psi0_glm"][0])

        def ipw_rows(s):
            return self._odds(s["eta1_ipw"], s["alpha_ps"], delta) * (d.y1 - s["psi0_ipw"][0])

        def ipw_solve(s):
            w = self._odds(s["eta1_ipw"], s["alpha_ps"], delta)
            return {"psi0_ipw": np.sum(w * d.y1) / np.sum(w)}

        def dr_rows(s):
            xi = self._xi(s, s["alpha0"], delta)
            odds = self._odds(s["eta1_dr"], s["alpha0"], delta)
            return odds * (d.y1 - xi) + A * xi - A * s["psi0_dr"][0]

        def dr_solve(s):
            xi = self._xi(s, s["alpha0"], delta)
            est = dr_att(d, spec, self._alpha(s["alpha0"]), s["eta1_dr"], xi, delta=delta)
            return {"psi0_dr": est.psi0}

        post_deps = post_params
        return [
            MomentBlock("effect0_glm", ("psi0_glm",), glm_rows, post_deps + ("alpha_or",),
                        lambda s: {"psi0_glm": np.mean(self._xi(s, s["alpha_or"], delta)[A == 1])}),
            MomentBlock("effect0_ipw", ("psi0_ipw",), ipw_rows, ("eta1_ipw", "alpha_ps"), ipw_solve),
            MomentBlock("effect0_dr", ("psi0_dr",), dr_rows, post_deps + ("alpha0", "eta1_dr"), dr_solve),
            MomentBlock("effect1", ("psi1",), lambda s: A * (d.y1 - s["psi1"][0]), (),
                        lambda s: {"psi1": np.mean(d.y1[A == 1])}),
            MomentBlock("t0_or", ("tau0", "alpha_or"), pre_rows, (), pre_solve),
            MomentBlock("t0_ps", ("eta0", "alpha_ps"), ps_rows, (), ps_solve),
            MomentBlock("odds_ratio", ("alpha0",), or_rows, ("eta0", "tau0", "alpha_or"), or_solve),
            MomentBlock("t1_or", post_params, post_rows, (), post_solve),
            eta_block("ipw", "alpha_ps"),
            eta_block("dr", "alpha0"),
        ]

    def diagnostics(self, estimator, theta):
        out = {"cutpoints": self.cutpoints.tolist()}
        for name in ("alpha_or", "alpha_ps", "alpha0"):
            if name in theta:
                out[name] = theta[name].tolist()
        return out


def fit_discretized(d: PanelDataset, M: int = DEFAULT_M, cutpoints=None, interact: bool = False,
                    post: str = "gaussian", contrast="additive", level: float = 0.95,
                    estimators=("glm", "ipw", "dr"), delta: float = 0.0):
    return DiscretizedModel(d, M, cutpoints, interact, post, contrast, level, estimators).fit(delta)
