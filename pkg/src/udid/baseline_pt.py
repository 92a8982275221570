"""Two-period difference-in-differences under parallel trends.

Regression, inverse-probability-weighting and doubly robust versions, each
written as a stacked estimating-equation system so the reports carry
sandwich standard errors. All three target psi0 = E(Y1^0 | A=1) as the
treated pre-period mean plus an imputed control-arm gain, so the same
additive or multiplicative contrasts apply as for the UDiD estimators.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit

from ._solvers import logistic_mle
from .data_model import PanelDataset
from .errors import OverlapError, ValidationError
from .estimators import StackModel
from .mestim import MomentBlock

OVERLAP_EPS = 1e-6
PT_ESTIMATORS = ("pt-reg", "pt-ipw", "pt-dr")


def pt_impute_binary(p00: float, p01: float, p10: float) -> float:
    """Parallel-trends imputation of E(Y1^0 | A=1) from binary marginals.

    ``p00 = P(Y0=1|A=0)``, ``p01 = P(Y1=1|A=0)``, ``p10 = P(Y0=1|A=1)``.
    The result is not clamped; a value outside [0, 1] triggers a warning.
    """
    for v in (p00, p01, p10):
        if not 0 < v < 1:
            raise ValueError("marginal probabilities must lie in (0, 1)")
    value = p10 + (p01 - p00)
    if not 0 <= value <= 1:
        warnings.warn(f"parallel-trends imputation {value:.4g} lies outside [0, 1]",
                      RuntimeWarning, stacklevel=2)
    return value


def _x1(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


class PtModel(StackModel):
    estimator_blocks = {
        "pt-reg": ("effect1", "gain_reg", "effect0_reg"),
        "pt-ipw": ("effect1", "ps", "effect0_ipw"),
        "pt-dr": ("effect1", "gain_reg", "ps", "effect0_dr"),
    }
    renames = {
        "pt-reg": {"psi0_reg": "psi0"},
        "pt-ipw": {"psi0_ipw": "psi0"},
        "pt-dr": {"psi0_dr": "psi0"},
    }

    def __init__(self, d: PanelDataset, contrast="additive", level: float = 0.95, estimators=None):
        super().__init__(d, contrast, level, estimators)
        self._design = _x1(self.d.x)
        ctrl = self._design[self.d.a == 0]
        if np.linalg.matrix_rank(ctrl) < ctrl.shape[1]:
            raise ValidationError([("covariates are collinear among controls", [])])
        self._gain = self.d.y1 - self.d.y0

    def param_sizes(self):
        q = 1 + self.d.p
        return {"psi1": 1, "psi0_reg": 1, "psi0_ipw": 1, "psi0_dr": 1, "gain_coef": q, "ps_coef": q,
                "gain_ipw": 1, "gain_dr": 1}

    def _odds(self, coef):
        return np.exp(self._design @ coef)

    def blocks(self, delta=0.0):
        d, D, g = self.d, self._design, self._gain
        A = d.a
        C = 1.0 - A

        def gain_solve(s):
            w = C
            coef = np.linalg.lstsq(D * np.sqrt(w)[:, None], g * np.sqrt(w), rcond=None)[0]
            return {"gain_coef": coef}

        def ps_solve(s):
            coef = logistic_mle(D, A).coef
            prob = expit(D @ coef)
            if np.any(prob <= OVERLAP_EPS) or np.any(prob >= 1 - OVERLAP_EPS):
                raise OverlapError(f"fitted propensity scores leave ({OVERLAP_EPS}, 1 - {OVERLAP_EPS})")
            return {"ps_coef": coef}

        def reg_rows(s):
            return A * (d.y0 + D @ s["gain_coef"] - s["psi0_reg"][0])

        def ipw_rows(s):
            odds = self._odds(s["ps_coef"])
            return np.column_stack([A * (d.y0 + s["gain_ipw"][0] - s["psi0_ipw"][0]),
                                    C * odds * (g - s["gain_ipw"][0])])

        def ipw_solve(s):
            w = C * self._odds(s["ps_coef"])
            gain = np.sum(w * g) / np.sum(w)
            return {"psi0_ipw": np.mean(d.y0[A == 1]) + gain, "gain_ipw": gain}

        def dr_rows(s):
            odds = self._odds(s["ps_coef"])
            fitted = D @ s["gain_coef"]
            return np.column_stack([A * (d.y0 + fitted + s["gain_dr"][0] - s["psi0_dr"][0]),
                                    C * odds * (g - fitted - s["gain_dr"][0])])

        def dr_solve(s):
            w = C * self._odds(s["ps_coef"])
            fitted = D @ s["gain_coef"]
            resid = np.sum(w * (g - fitted)) / np.sum(w)
            return {"psi0_dr": np.mean((d.y0 + fitted)[A == 1]) + resid, "gain_dr": resid}

        return [
            MomentBlock("effect1", ("psi1",), lambda s: A * (d.y1 - s["psi1"][0]), (),
                        lambda s: {"psi1": np.mean(d.y1[A == 1])}),
            MomentBlock("gain_reg", ("gain_coef",), lambda s: (C * (g - D @ s["gain_coef"]))[:, None] * D,
                        (), gain_solve),
            MomentBlock("ps", ("ps_coef",), lambda s: (A - expit(D @ s["ps_coef"]))[:, None] * D, (),
                        ps_solve),
            MomentBlock("effect0_reg", ("psi0_reg",), reg_rows, ("gain_coef",),
                        lambda s: {"psi0_reg": np.mean((d.y0 + D @ s["gain_coef"])[A == 1])}),
            MomentBlock("effect0_ipw", ("psi0_ipw", "gain_ipw"), ipw_rows, ("ps_coef",), ipw_solve),
            MomentBlock("effect0_dr", ("psi0_dr", "gain_dr"), dr_rows, ("ps_coef", "gain_coef"), dr_solve),
        ]


def fit_pt(d: PanelDataset, estimators=PT_ESTIMATORS, contrast="additive", level: float = 0.95):
    return PtModel(d, contrast, level, estimators).fit()


def pt_att_regression(d: PanelDataset, contrast="additive", level: float = 0.95):
    return fit_pt(d, ("pt-reg",), contrast, level)["pt-reg"]


def pt_att_ipw(d: PanelDataset, contrast="additive", level: float = 0.95):
    return fit_pt(d, ("pt-ipw",), contrast, level)["pt-ipw"]


def pt_att_dr(d: PanelDataset, contrast="additive", level: float = 0.95):
    return fit_pt(d, ("pt-dr",), contrast, level)["pt-dr"]
