"""Confounding log-odds-ratio functions and the exponential-family catalog.

Two forms of the log odds ratio beta(y, x) are supported:

``LogLinear``
    beta(y, x) = alpha' S0(y, x) with the default basis
    S0(y, x) = (y - y_ref) * (1, x')' and an optional quadratic term
    (y - y_ref)^2 that lets a Gaussian outcome have arm-specific variance.
``Discretized``
    beta(y, x) = Z(x)' alpha_{B(y)} where B(y) is a quantile bin and bin 1
    is the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import logit


def _as_matrix(x, n):
    if x is None:
        return np.empty((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if n == 1 else x.reshape(n, -1)
    return x


def _z_basis(x, interact):
    ones = np.ones((x.shape[0], 1))
    return np.hstack([ones, x]) if interact else ones


@dataclass(frozen=True)
class LogLinear:
    """Log-linear odds-ratio function beta(y, x) = alpha' S0(y, x).

    Parameters
    ----------
    alpha : coefficient vector, or None when only the basis is needed.
    y_ref : outcome value where beta vanishes.
    interact : if True the y-terms interact with covariates, S0 = (y - y_ref)(1, x').
    quadratic : append (y - y_ref)^2 (Gaussian outcomes only).
    basis : optional custom callable ``basis(y, x) -> (n, k)`` replacing the
        structured basis; it must vanish at ``y_ref``.
    """

    alpha: np.ndarray | None = None
    y_ref: float = 0.0
    interact: bool = True
    quadratic: bool = False
    basis: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)))

    @property
    def structured(self) -> bool:
        return self.basis is None

    def dim(self, p: int) -> int:
        if self.basis is not None:
            return int(np.shape(self.basis(np.zeros(1), np.zeros((1, p))))[1])
        return (1 + p if self.interact else 1) + int(self.quadratic)

    def names(self, p: int) -> list[str]:
        if self.basis is not None:
            return [f"s{j}" for j in range(self.dim(p))]
        out = ["y"] + ([f"y*x{j + 1}" for j in range(p)] if self.interact else [])
        return out + (["y^2"] if self.quadratic else [])

    def z(self, x) -> np.ndarray:
        return _z_basis(x, self.interact)

    def stat(self, y, x) -> np.ndarray:
        """Evaluate S0(y, x) row-wise; returns shape (n, k)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        x = _as_matrix(x, len(y))
        if self.basis is not None:
            return np.asarray(self.basis(y, x), dtype=float).reshape(len(y), -1)
        centered = y - self.y_ref
        out = centered[:, None] * self.z(x)
        if self.quadratic:
            out = np.hstack([out, (centered**2)[:, None]])
        return out

    def linear_quadratic(self, x):
        """Split S0(y, x) = L(x) y + Q(x) y^2 + c(x); returns (L, Q), each (n, k)."""
        if self.basis is not None:
            raise ValueError("a custom odds-ratio basis has no linear/quadratic split")
        z = self.z(x)
        n = z.shape[0]
        L, Q = z, np.zeros_like(z)
        if self.quadratic:
            L = np.hstack([L, np.full((n, 1), -2.0 * self.y_ref)])
            Q = np.hstack([Q, np.ones((n, 1))])
        return L, Q

    def y_direction(self, p: int) -> np.ndarray:
        """Unit vector e_Y with e_Y' S0(y, x) = y - y_ref."""
        if self.basis is not None:
            raise ValueError("e_Y is undefined for a custom basis")
        e = np.zeros(self.dim(p))
        e[0] = 1.0
        return e

    def with_alpha(self, alpha) -> "LogLinear":
        return LogLinear(alpha, self.y_ref, self.interact, self.quadratic, self.basis)


@dataclass(frozen=True)
class Discretized:
    """Piecewise-constant odds-ratio function on quantile bins of the outcome.

    ``alpha_bins`` has shape (M - 1, p_z): one row per non-reference bin.
    """

    cutpoints: np.ndarray
    alpha_bins: np.ndarray | None = None
    interact: bool = False

    def __post_init__(self):
        cuts = np.atleast_1d(np.asarray(self.cutpoints, dtype=float))
        if np.any(np.diff(cuts) < 0):
            raise ValueError("cutpoints must be nondecreasing")
        object.__setattr__(self, "cutpoints", cuts)
        if self.alpha_bins is not None:
            object.__setattr__(self, "alpha_bins",
                               np.asarray(self.alpha_bins, dtype=float).reshape(self.M - 1, -1))

    @property
    def M(self) -> int:
        return self.cutpoints.size + 1

    def z(self, x) -> np.ndarray:
        return _z_basis(x, self.interact)

    def bins(self, y) -> np.ndarray:
        return bin_assign(self.cutpoints, y)

    def with_alpha(self, alpha_bins) -> "Discretized":
        return Discretized(self.cutpoints, alpha_bins, self.interact)


def beta_eval(spec, y, x=None):
    """Evaluate the log odds ratio beta(y, x); vectorized over rows.

    Returns a float for scalar ``y`` and an array otherwise.
    """
    scalar = np.ndim(y) == 0
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    xm = _as_matrix(x, len(yv))
    if isinstance(spec, LogLinear):
        if spec.alpha is None:
            raise ValueError("odds-ratio coefficients are not set")
        S = spec.stat(yv, xm)
        if S.shape[1] != spec.alpha.size:
            raise ValueError(f"alpha has {spec.alpha.size} entries, basis has {S.shape[1]}")
        out = S @ spec.alpha
    elif isinstance(spec, Discretized):
        if spec.alpha_bins is None:
            raise ValueError("per-bin coefficients are not set")
        z = spec.z(xm)
        if z.shape[1] != spec.alpha_bins.shape[1]:
            raise ValueError("per-bin coefficients do not match the Z basis")
        table = np.vstack([np.zeros(z.shape[1]), spec.alpha_bins])
        out = np.sum(z * table[spec.bins(yv) - 1], axis=1)
    else:
        raise TypeError(f"unsupported odds-ratio spec {type(spec).__name__}")
    return float(out[0]) if scalar else out


def bernoulli_or(p_ctrl: float, p_trt: float) -> float:
    """Log odds ratio between two Bernoulli probabilities."""
    for p in (p_ctrl, p_trt):
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability {p} must lie strictly inside (0, 1)")
    return float(logit(p_trt) - logit(p_ctrl))


def bin_assign(cutpoints, y):
    """Bin index 1..M with right-closed intervals (c_{m-1}, c_m]."""
    idx = np.searchsorted(np.asarray(cutpoints, dtype=float), y, side="left") + 1
    return int(idx) if np.ndim(idx) == 0 else idx


def make_cutpoints(y0, M: int) -> np.ndarray:
    """Interpolated empirical quantiles of ``y0`` at levels m/M, m = 1..M-1."""
    y0 = np.asarray(y0, dtype=float)
    if M < 2:
        raise ValueError("need at least two bins")
    if M > y0.size:
        raise ValueError(f"M={M} exceeds the sample size {y0.size}")
    return np.quantile(y0, np.arange(1, M) / M, method="linear")


# ---------------------------------------------------------------------------
# Exponential-family catalog

@dataclass(frozen=True)
class FamilySpec:
    """Baseline density family with its sufficient statistic and alpha map.

    ``params`` fixes any parameter shared by both arms (e.g. Binomial size).
    ``alpha_map(ctrl, trt)`` returns the odds-ratio coefficient on S*(y)
    relating two members of the family with parameter dicts ``ctrl`` and ``trt``.
    """

    name: str
    stat_names: tuple
    sufficient_stat: Callable = field(compare=False)
    logpdf: Callable = field(compare=False)
    support: tuple
    discrete: bool
    can_fit: bool
    alpha_map: Callable = field(compare=False)
    params: dict = field(default_factory=dict, compare=False)


def _cat(name, stat_names, stat, logpdf, support, discrete, alpha_map, can_fit=False, **params):
    return FamilySpec(name, tuple(stat_names), stat, logpdf, support, discrete, can_fit,
                      alpha_map, params)


def gaussian():
    return _cat(
        "gaussian", ("y", "y^2"),
        lambda y: np.column_stack([y, np.square(y)]),
        lambda y, mu, sigma2: stats.norm.logpdf(y, mu, np.sqrt(sigma2)),
        (-np.inf, np.inf), False,
        lambda c, t: np.array([t["mu"] / t["sigma2"] - c["mu"] / c["sigma2"],
                               -0.5 / t["sigma2"] + 0.5 / c["sigma2"]]),
        can_fit=True)


def bernoulli():
    return _cat("bernoulli", ("y",), lambda y: np.asarray(y, float)[:, None],
                lambda y, p: stats.bernoulli.logpmf(y, p), (0, 1), True,
                lambda c, t: np.array([logit(t["p"]) - logit(c["p"])]), can_fit=True)


def binomial(M: int):
    return _cat("binomial", ("y",), lambda y: np.asarray(y, float)[:, None],
                lambda y, p: stats.binom.logpmf(y, M, p), (0, M), True,
                lambda c, t: np.array([logit(t["p"]) - logit(c["p"])]), M=M)


def poisson():
    return _cat("poisson", ("y",), lambda y: np.asarray(y, float)[:, None],
                lambda y, lam: stats.poisson.logpmf(y, lam), (0, np.inf), True,
                lambda c, t: np.array([np.log(t["lam"]) - np.log(c["lam"])]), can_fit=True)


def negbinomial(M: int):
    # pmf C(y + M - 1, y) p^M (1 - p)^y: number of failures before the M-th success
    return _cat("negbinomial", ("y",), lambda y: np.asarray(y, float)[:, None],
                lambda y, p: stats.nbinom.logpmf(y, M, p), (0, np.inf), True,
                lambda c, t: np.array([np.log1p(-t["p"]) - np.log1p(-c["p"])]), M=M)


def gamma():
    return _cat("gamma", ("y", "log y"), lambda y: np.column_stack([y, np.log(y)]),
                lambda y, kappa, lam: stats.gamma.logpdf(y, kappa, scale=lam), (0, np.inf), False,
                lambda c, t: np.array([-1 / t["lam"] + 1 / c["lam"], t["kappa"] - c["kappa"]]))


def exponential():
    return _cat("exponential", ("y",), lambda y: np.asarray(y, float)[:, None],
                lambda y, lam: stats.expon.logpdf(y, scale=lam), (0, np.inf), False,
                lambda c, t: np.array([-1 / t["lam"] + 1 / c["lam"]]))


def pareto(y_m: float):
    return _cat("pareto", ("log y",), lambda y: np.log(y)[:, None],
                lambda y, kappa: stats.pareto.logpdf(y, kappa, scale=y_m), (y_m, np.inf), False,
                lambda c, t: np.array([c["kappa"] - t["kappa"]]), y_m=y_m)


def weibull(kappa: float):
    return _cat("weibull", ("y^kappa",), lambda y: np.power(y, kappa)[:, None],
                lambda y, lam: stats.weibull_min.logpdf(y, kappa, scale=lam), (0, np.inf), False,
                lambda c, t: np.array([c["lam"] ** -kappa - t["lam"] ** -kappa]), kappa=kappa)


def laplace(mu: float):
    return _cat("laplace", ("|y - mu|",), lambda y: np.abs(np.asarray(y, float) - mu)[:, None],
                lambda y, sigma: stats.laplace.logpdf(y, mu, sigma), (-np.inf, np.inf), False,
                lambda c, t: np.array([-1 / t["sigma"] + 1 / c["sigma"]]), mu=mu)


def beta_family():
    return _cat("beta", ("log y", "log(1-y)"),
                lambda y: np.column_stack([np.log(y), np.log1p(-np.asarray(y, float))]),
                lambda y, kappa, lam: stats.beta.logpdf(y, kappa, lam), (0, 1), False,
                lambda c, t: np.array([t["kappa"] - c["kappa"], t["lam"] - c["lam"]]))


CATALOG = {
    "gaussian": gaussian, "bernoulli": bernoulli, "binomial": binomial, "poisson": poisson,
    "negbinomial": negbinomial, "gamma": gamma, "exponential": exponential, "pareto": pareto,
    "weibull": weibull, "laplace": laplace, "beta": beta_family,
}


def get_family(fam, **params) -> FamilySpec:
    """Return a FamilySpec from an instance or a catalog name."""
    if isinstance(fam, FamilySpec):
        return fam
    key = str(fam).lower()
    if key not in CATALOG:
        raise ValueError(f"unknown family {fam!r}; choose from {sorted(CATALOG)}")
    return CATALOG[key](**params)
