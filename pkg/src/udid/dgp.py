"""Synthetic two-period panels with known ATT.

Randomness comes from a counter-based Philox generator. Unit ``i`` consumes
its own fixed block of uniforms (block width rounded up to a multiple of
four, the Philox output width), so any slice of units can be generated
independently and reproduces the same values as a single full pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logit, ndtri
from scipy.stats import chi2

from .data_model import PanelDataset

MC_DRAWS = 10_000_000


def unit_uniforms(seed: int, start: int, stop: int, k: int) -> np.ndarray:
    """Uniforms for units ``start..stop-1``, shape (stop-start, k)."""
    width = -(-k // 4) * 4
    bitgen = np.random.Philox(seed)
    bitgen.advance(start * width // 4)
    out = np.random.Generator(bitgen).random((stop - start, width))
    # Keep strictly inside (0, 1) for the inverse-CDF transforms.
    return np.clip(out[:, :k], 1e-16, 1 - 1e-16)


@dataclass(frozen=True)
class ContinuousOrec:
    """Y_t = U_t + eps_t (+ x'b), U | A=0 ~ N(mu_u, sigma_u^2).

    The treated arm's latent U is Gaussian N(mu_u1, sigma_u^2) or a
    two-component mixture. With unequal error variances the treated mean at
    t=1 is moved to mu_u + kappa * sigma_1^2 with kappa = (mu_u1 - mu_u) / sigma_0^2,
    the unique Gaussian choice under which the odds-ratio function is the
    same in both periods. ``departure`` adds ``departure * y`` to the post-period
    log odds ratio, moving that mean by a further ``departure * sigma_1^2``.
    """

    n: int = 5000
    seed: int = 0
    treated_frac: float = 0.4
    mu_u: float = 0.0
    sigma_u: float = 1.0
    mu_u1: float = 1.0
    mixture: tuple | None = None  # ((weight, mean, sd), (weight, mean, sd))
    sigma_eps0: float = 1.0
    sigma_eps1: float = 1.0
    effect: float = 0.0
    departure: float = 0.0
    n_cov: int = 0
    cov_shift: float = 0.0
    cov_coef: float = 0.5
    kind: str = field(default="continuous_orec", init=False)

    def check(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if min(self.sigma_u, self.sigma_eps0, self.sigma_eps1) <= 0:
            raise ValueError("standard deviations must be positive")
        if not 0 < self.treated_frac < 1:
            raise ValueError("treated_frac must lie in (0, 1)")
        if self.mixture is not None:
            if self.sigma_eps0 != self.sigma_eps1 or self.departure:
                raise ValueError("a mixture treated arm needs equal error variances and no departure")
            if len(self.mixture) != 2 or abs(sum(c[0] for c in self.mixture) - 1) > 1e-12:
                raise ValueError("mixture needs two components with weights summing to 1")
            if min(c[2] for c in self.mixture) <= 0:
                raise ValueError("mixture standard deviations must be positive")

    @property
    def var0(self):
        return self.sigma_u**2 + self.sigma_eps0**2

    @property
    def var1(self):
        return self.sigma_u**2 + self.sigma_eps1**2

    @property
    def treated_mean1(self):
        """Mean of the treated-arm latent variable at t=1."""
        kappa = (self.mu_u1 - self.mu_u) / self.var0
        return self.mu_u + (kappa + self.departure) * self.var1


@dataclass(frozen=True)
class BinaryOrec:
    """Y_t = 1(b_t + U_t >= 0), U_t | A ~ Logistic(nu(A), sigma_u).

    ``latent_corr`` is the probability that U_1 reuses U_0's draw.
    """

    n: int = 5000
    seed: int = 0
    treated_frac: float = 0.4
    b0: float = float(logit(0.4))
    b1: float = float(logit(0.8))
    nu0: float = 0.0
    nu1: float = float(np.log(6.0))
    sigma_u: float = 1.0
    latent_corr: float = 0.5
    effect: float = 0.0
    kind: str = field(default="binary_orec", init=False)

    def check(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.sigma_u <= 0:
            raise ValueError("sigma_u must be positive")
        if not 0 < self.treated_frac < 1:
            raise ValueError("treated_frac must lie in (0, 1)")
        p = self.marginal(1, 1)
        if not -p <= self.effect <= 1 - p:
            raise ValueError("risk-difference effect leaves [0, 1]")

    def marginal(self, t, a):
        """P(Y_t^0 = 1 | A = a)."""
        b = self.b1 if t else self.b0
        nu = self.nu1 if a else self.nu0
        return float(expit((b + nu) / self.sigma_u))


@dataclass(frozen=True)
class GaussianPt:
    """Y_t = beta0 + beta_a A + beta_t t + effect A t + x'b + e_t, with period sds."""

    n: int = 5000
    seed: int = 0
    treated_frac: float = 0.4
    beta0: float = 0.0
    beta_a: float = 1.0
    beta_t: float = 0.5
    effect: float = 2.0
    sigma0: float = 1.0
    sigma1: float = 1.0
    error_corr: float = 0.5
    error_law: str = "gaussian"  # or "t5"
    n_cov: int = 0
    cov_shift: float = 0.0
    cov_coef: float = 0.5
    kind: str = field(default="gaussian_pt", init=False)

    def check(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if min(self.sigma0, self.sigma1) <= 0 or not -1 < self.error_corr < 1:
            raise ValueError("invalid error parameters")
        if self.error_law not in ("gaussian", "t5"):
            raise ValueError("error_law must be gaussian or t5")
        if not 0 < self.treated_frac < 1:
            raise ValueError("treated_frac must lie in (0, 1)")


CONFIG_TYPES = {"continuous_orec": ContinuousOrec, "binary_orec": BinaryOrec, "gaussian_pt": GaussianPt}


def config_dict(cfg) -> dict:
    return asdict(cfg)


def _covariates(cfg, u, a):
    if cfg.n_cov == 0:
        return np.empty((cfg.n, 0)), np.zeros(cfg.n)
    x = ndtri(u) + cfg.cov_shift * a[:, None]
    return x, x @ np.full(cfg.n_cov, cfg.cov_coef)


def _draw(cfg, u):
    """Build (y0, y1, a, x) from a unit-by-column uniform matrix ``u``."""
    a = (u[:, 0] < cfg.treated_frac).astype(float)
    if isinstance(cfg, ContinuousOrec):
        x, shift = _covariates(cfg, u[:, 5:5 + cfg.n_cov], a)
        z_u, e0, e1 = ndtri(u[:, 1]), ndtri(u[:, 2]), ndtri(u[:, 3])
        if cfg.mixture is None:
            lat0 = np.where(a == 1, cfg.mu_u1, cfg.mu_u) + cfg.sigma_u * z_u
            lat1 = np.where(a == 1, cfg.treated_mean1, cfg.mu_u) + cfg.sigma_u * z_u
        else:
            (w1, m1, s1), (_, m2, s2) = cfg.mixture
            first = u[:, 4] < w1
            mix = np.where(first, m1 + s1 * z_u, m2 + s2 * z_u)
            lat0 = lat1 = np.where(a == 1, mix, cfg.mu_u + cfg.sigma_u * z_u)
        y0 = lat0 + cfg.sigma_eps0 * e0 + shift
        y1 = lat1 + cfg.sigma_eps1 * e1 + shift + cfg.effect * a
        return y0, y1, a, x
    if isinstance(cfg, BinaryOrec):
        nu = np.where(a == 1, cfg.nu1, cfg.nu0)
        lat0 = nu + cfg.sigma_u * logit(u[:, 1])
        fresh = nu + cfg.sigma_u * logit(u[:, 2])
        lat1 = np.where(u[:, 3] < cfg.latent_corr, lat0, fresh)
        y0 = (cfg.b0 + lat0 >= 0).astype(float)
        y1 = (cfg.b1 + lat1 >= 0).astype(float)
        if cfg.effect:
            p = cfg.marginal(1, 1)
            flip = u[:, 4] < (cfg.effect / (1 - p) if cfg.effect > 0 else -cfg.effect / p)
            target = 0.0 if cfg.effect > 0 else 1.0
            y1 = np.where((a == 1) & (y1 == target) & flip, 1.0 - target, y1)
        return y0, y1, a, np.empty((cfg.n, 0))
    x, shift = _covariates(cfg, u[:, 4:4 + cfg.n_cov], a)
    z0, z1 = ndtri(u[:, 1]), ndtri(u[:, 2])
    e0 = z0
    e1 = cfg.error_corr * z0 + np.sqrt(1 - cfg.error_corr**2) * z1
    if cfg.error_law == "t5":
        # Student t with 5 df, rescaled to unit variance.
        w = np.sqrt(3 / 5) / np.sqrt(chi2.ppf(u[:, 3], 5) / 5)
        e0, e1 = e0 * w, e1 * w
    base = cfg.beta0 + cfg.beta_a * a + shift
    y0 = base + cfg.sigma0 * e0
    y1 = base + cfg.beta_t + cfg.effect * a + cfg.sigma1 * e1
    return y0, y1, a, x


def _n_uniforms(cfg) -> int:
    return 5 + getattr(cfg, "n_cov", 0)


def simulate(cfg, chunk: int | None = None):
    """Draw a panel; returns ``(PanelDataset, true_att)``."""
    cfg.check()
    k = _n_uniforms(cfg)
    if chunk is None:
        u = unit_uniforms(cfg.seed, 0, cfg.n, k)
    else:
        u = np.vstack([unit_uniforms(cfg.seed, s, min(s + chunk, cfg.n), k)
                       for s in range(0, cfg.n, chunk)])
    y0, y1, a, x = _draw(cfg, u)
    return PanelDataset(y0, y1, a, x), float(cfg.effect)


def oracle_att0(cfg, draws: int = MC_DRAWS):
    """E(Y_1^0 | A=1) as ``(value, mc_se)``; the SE is 0 for closed forms."""
    cfg.check()
    if isinstance(cfg, BinaryOrec):
        return cfg.marginal(1, 1), 0.0
    cov_mean = getattr(cfg, "n_cov", 0) * cfg.cov_coef * cfg.cov_shift
    if isinstance(cfg, GaussianPt):
        return cfg.beta0 + cfg.beta_a + cfg.beta_t + cov_mean, 0.0
    if cfg.mixture is None:
        return cfg.treated_mean1 + cov_mean, 0.0
    rng = np.random.Generator(np.random.Philox(cfg.seed + 1))
    (w1, m1, s1), (_, m2, s2) = cfg.mixture
    first = rng.random(draws) < w1
    lat = np.where(first, rng.normal(m1, s1, draws), rng.normal(m2, s2, draws))
    y = lat + cfg.sigma_eps1 * rng.standard_normal(draws)
    return float(y.mean() + cov_mean), float(y.std(ddof=1) / np.sqrt(draws))


def _binned_log_or(y_trt, y_ctrl, edges):
    c_t = np.histogram(y_trt, edges)[0].astype(float)
    c_c = np.histogram(y_ctrl, edges)[0].astype(float)
    ok = (c_t > 0) & (c_c > 0)
    ref = int(np.argmax(np.where(ok, c_t + c_c, -1)))
    lor = np.log(c_t / c_c) - np.log(c_t[ref] / c_c[ref])
    var = 1 / c_t + 1 / c_c + 1 / c_t[ref] + 1 / c_c[ref]
    var[ref] = 0.0
    return lor, var, ok


def verify_orec(cfg, draws: int = MC_DRAWS, bins: int = 50, z_limit: float = 4.0) -> dict:
    """Compare the odds-ratio functions of the two periods.

    Binary configs are exact. Continuous configs simulate ``draws`` units and
    compare per-bin log odds ratios (relative to the fullest bin) on the
    covariate-adjusted outcome between the 2.5% and 97.5% pooled quantiles.
    """
    cfg.check()
    if isinstance(cfg, BinaryOrec):
        beta = []
        for t in (0, 1):
            p0, p1 = cfg.marginal(t, 0), cfg.marginal(t, 1)
            beta.append(np.log(p1 / (1 - p1)) - np.log(p0 / (1 - p0)))
        gap = abs(beta[0] - beta[1])
        return {"beta0": float(beta[0]), "beta1": float(beta[1]), "max_abs_diff": float(gap),
                "max_z": float("nan"), "passed": bool(gap < 1e-12)}
    big = type(cfg)(**{**{k: v for k, v in asdict(cfg).items() if k != "kind"},
                       "n": draws, "effect": 0.0})
    d, _ = simulate(big)
    shift = d.x @ np.full(d.p, cfg.cov_coef) if d.p else 0.0
    r0, r1 = d.y0 - shift, d.y1 - shift
    pooled = np.concatenate([r0, r1])
    lo, hi = np.quantile(pooled, [0.025, 0.975])
    edges = np.linspace(lo, hi, bins + 1)
    t = d.a == 1
    l0, v0, ok0 = _binned_log_or(r0[t], r0[~t], edges)
    l1, v1, ok1 = _binned_log_or(r1[t], r1[~t], edges)
    ok = ok0 & ok1
    # Align both periods on a common reference bin.
    ref = int(np.argmax(np.where(ok, np.histogram(pooled, edges)[0], -1)))
    l0, l1 = l0 - l0[ref], l1 - l1[ref]
    diff = np.abs(l0 - l1)[ok]
    se = np.sqrt(v0 + v1)[ok]
    z = np.where(se > 0, diff / np.where(se > 0, se, 1), 0.0)
    return {"max_abs_diff": float(diff.max()), "max_z": float(z.max()), "bins_used": int(ok.sum()),
            "passed": bool(z.max() < z_limit)}


def zika_like(seed: int = 0, effect: float = -1.0) -> ContinuousOrec:
    """Synthetic lookalike of a 673-unit municipal panel with about 185 treated units.

    Three standardized covariates stand in for log population, density and
    the female share; they shift with treatment and enter the outcome linearly.
    """
    return ContinuousOrec(n=673, seed=seed, treated_frac=185 / 673, mu_u=0.0, sigma_u=1.0,
                          mu_u1=0.8, sigma_eps0=0.8, sigma_eps1=1.0, effect=effect, n_cov=3,
                          cov_shift=0.3, cov_coef=0.4)
