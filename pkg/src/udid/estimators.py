"""End-to-end UDiD estimation: nuisance fits, stacked moments and reports.

:class:`StackModel` is the shared driver. A subclass lists its moment blocks
(for every estimator at once) and which blocks each estimator needs; the
driver solves the union block by block, records per-block failures without
aborting the rest, and computes one joint sandwich for all estimators that
succeeded. Because the bread matrix is block-triangular, each estimator's
variance is the same as it would be from its own smaller stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data_model import STACK_ORDER, PanelDataset, ParameterStack, as_contrast, validate
from .dr_engine import dr_att, dr_inputs, or_moment_obs, solve_alpha_dr
from .eps_engine import eta1_moment_obs, fit_pre_eps, pre_eps_design, solve_eta1
from .errors import ConvergenceError, UdidError
from .glm_engine import (OutcomeFit, fit_post_outcome_control, fit_pre_outcome, post_outcome_model,
                         pre_outcome_model, xi_eval)
from .mestim import (RESIDUAL_TOL, EstimationReport, MomentBlock, Sandwich, StackedSystem,
                     failed_report, report_from_stack, sandwich)
from .or_family import LogLinear, beta_eval, get_family

UDID_ESTIMATORS = ("glm", "ipw", "dr")


@dataclass
class StackFit:
    """Outcome of :meth:`StackModel.fit`."""

    reports: dict
    theta: ParameterStack
    failures: dict = field(default_factory=dict)
    sandwich: object = None
    delta: float = 0.0

    def __getitem__(self, estimator) -> EstimationReport:
        return self.reports[estimator]


def solve_partial(system: StackedSystem, init: ParameterStack, skip=()):
    """Solve blocks in order, skipping any whose inputs failed; returns (stack, failures)."""
    from .mestim import _solve_block

    stack, failures = init, {}
    failed_params = set()
    for blk in system.order:
        if blk.name in skip:
            continue
        if failed_params & set(blk.depends):
            failures[blk.name] = "upstream block failed"
            failed_params |= set(blk.params)
            continue
        try:
            stack = _solve_block(blk, stack)
        except (UdidError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failures[blk.name] = f"{type(exc).__name__}: {exc}"
            failed_params |= set(blk.params)
    return stack, failures


class StackModel:
    """Base driver; subclasses fill in the block and parameter tables."""

    estimator_blocks: dict = {}
    renames: dict = {}
    delta_free: frozenset = frozenset()

    def __init__(self, d: PanelDataset, contrast="additive", level: float = 0.95,
                 estimators=None):
        self.d = validate(d)
        self.contrast = as_contrast(contrast)
        self.level = float(level)
        wanted = tuple(estimators) if estimators else tuple(self.estimator_blocks)
        unknown = [e for e in wanted if e not in self.estimator_blocks]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; available {list(self.estimator_blocks)}")
        self.estimators = wanted

    # -- subclass hooks ---------------------------------------------------
    def param_sizes(self) -> dict:
        raise NotImplementedError

    def blocks(self, delta: float) -> list:
        raise NotImplementedError

    def diagnostics(self, estimator: str, theta: ParameterStack) -> dict:
        return {}

    # -- driver -------------------------------------------------------------
    def _system(self, delta, estimators):
        needed = set().union(*(self.estimator_blocks[e] for e in estimators)) if estimators else set()
        blocks = [b for b in self.blocks(delta) if b.name in needed]
        return StackedSystem(blocks, self.d.n)

    def _init(self, system, base: StackFit | None):
        sizes = self.param_sizes()
        names = [p for blk in system.blocks for p in blk.params]
        values = []
        for name in names:
            if base is not None and name in base.theta:
                values.append((name, base.theta[name]))
            else:
                values.append((name, np.zeros(sizes[name])))
        return ParameterStack(values)

    def fit(self, delta: float = 0.0, base: StackFit | None = None) -> StackFit:
        system = self._system(delta, self.estimators)
        init = self._init(system, base)
        skip = self.delta_free if base is not None else ()
        theta, failures = solve_partial(system, init, skip)
        ok = [e for e in self.estimators
              if not (set(self.estimator_blocks[e]) & set(failures))]
        reports, sand = {}, None
        if ok:
            try:
                shared = self._sandwich(delta, ok, theta)
                per = {e: shared for e in ok}
                sand = shared[0]
            except (UdidError, ArithmeticError) as exc:
                failures["sandwich"] = str(exc)
                per = {}
                for e in ok:
                    try:
                        per[e] = self._sandwich(delta, [e], theta)
                    except (UdidError, ArithmeticError) as inner:
                        failures[f"sandwich:{e}"] = str(inner)
            for e, (e_sand, e_theta) in per.items():
                reports[e] = self._report(e, e_theta, e_sand)
        for e in self.estimators:
            if e not in reports:
                reasons = [f"{b}: {failures[b]}" for b in self.estimator_blocks[e] if b in failures]
                reasons += [v for k, v in failures.items() if k.startswith("sandwich")]
                reports[e] = failed_report(e, self.contrast, self.d.n, self.d.n_treated, self.level,
                                           "; ".join(reasons) or "estimation failed")
        ordered = {e: reports[e] for e in self.estimators}
        return StackFit(ordered, theta, failures, sand, delta)

    def _sandwich(self, delta, estimators, theta):
        sub = self._system(delta, estimators)
        sub_theta = ParameterStack([(p, theta[p]) for blk in sub.blocks for p in blk.params])
        resid = sub.mean_moment(sub_theta)
        worst = int(np.argmax(np.abs(resid)))
        if abs(resid[worst]) > RESIDUAL_TOL:
            block = sub.owner_of(sub_theta.name_at(worst)).name
            raise ConvergenceError(f"stacked residual {abs(resid[worst]):.3g} exceeds tolerance", block)
        return sandwich(sub, sub_theta), sub_theta

    def _report(self, estimator, theta, sand) -> EstimationReport:
        names = [p for b in self.estimator_blocks[estimator] for p in self._block_params(b)]
        rename = self.renames.get(estimator, {})
        order = {name: i for i, name in enumerate(STACK_ORDER)}
        canon = sorted(names, key=lambda p: order.get(rename.get(p, p), len(order)))
        idx = np.concatenate([np.arange(theta.size)[theta.index(p)] for p in canon])
        own = ParameterStack([(rename.get(p, p), theta[p]) for p in canon])
        cov = sand.cov[np.ix_(idx, idx)]
        local = Sandwich(cov, None, None, tuple(own.label(i) for i in range(own.size)))
        diag = self.diagnostics(estimator, theta)
        rep = report_from_stack(estimator, own, local, "psi0", "psi1", self.contrast, self.level,
                                self.d.n, self.d.n_treated, diag)
        if self.contrast.kind == "additive":
            ctrl_mean = float(np.mean(self.d.y1[self.d.a == 0]))
            rep.diagnostics["crude"] = rep.psi1 - ctrl_mean
            rep.diagnostics["debias"] = rep.psi0 - ctrl_mean
        return rep

    def _block_params(self, block_name):
        for blk in self.blocks(0.0):
            if blk.name == block_name:
                return blk.params
        raise KeyError(block_name)


def _x1(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _outcome(family, tau, gamma, alpha=None) -> OutcomeFit:
    return OutcomeFit(family, np.asarray(tau), np.asarray(gamma),
                      None if alpha is None else np.asarray(alpha), np.nan, True, 0)


class UdidModel(StackModel):
    """Log-linear odds-ratio UDiD with GLM, IPW and doubly robust estimators.

    Parameters
    ----------
    d : validated panel.
    family : outcome family for the likelihood fits (gaussian, bernoulli, poisson).
    spec : odds-ratio basis; defaults to (y, y * x').
    contrast : ``"additive"`` or ``"multiplicative"``.
    level : confidence level.
    estimators : subset of ``("glm", "ipw", "dr")``.
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

    def __init__(self, d: PanelDataset, family="gaussian", spec: LogLinear | None = None,
                 contrast="additive", level: float = 0.95, estimators=None):
        super().__init__(d, contrast, level, estimators)
        self.fam = get_family(family)
        self.spec = spec or LogLinear(interact=self.d.p > 0)
        if not isinstance(self.spec, LogLinear):
            raise TypeError("UdidModel needs a LogLinear spec; use DiscretizedModel for bins")
        d = self.d
        self._m0 = pre_outcome_model(d, self.fam, self.spec)
        self._m1 = post_outcome_model(d, self.fam)
        self._ps_design = pre_eps_design(d, self.spec)
        self._ctrl = (d.a == 0).astype(float)

    def param_sizes(self):
        p, k = self.d.p, self.spec.dim(self.d.p)
        tau = 2 if self.fam.name == "gaussian" else 1
        return {"psi0_glm": 1, "psi0_ipw": 1, "psi0_dr": 1, "psi1": 1, "tau0": tau, "gamma0": p,
                "alpha_or": k, "eta0": 1 + p, "alpha_ps": k, "alpha0": k, "tau1": tau,
                "gamma1": p, "eta1_ipw": 1 + p, "eta1_dr": 1 + p}

    def _theta0(self, s):
        return np.concatenate([s["tau0"][:1], s["gamma0"], s["tau0"][1:], s["alpha_or"]])

    def _theta1(self, s):
        return np.concatenate([s["tau1"][:1], s["gamma1"], s["tau1"][1:]])

    def _xi(self, s, alpha, delta):
        fit1 = _outcome(self.fam.name, s["tau1"], s["gamma1"])
        return xi_eval(self.fam, fit1, self.spec, alpha, self.d.x, delta)

    def _odds(self, eta1, alpha, delta):
        d = self.d
        log_odds = _x1(d.x) @ eta1 + beta_eval(self.spec.with_alpha(alpha), d.y1, d.x) + delta * d.y1
        with np.errstate(over="ignore"):
            return np.where(d.a == 0, np.exp(np.where(d.a == 0, log_odds, 0.0)), 0.0)

    def blocks(self, delta):
        d, spec, fam = self.d, self.spec, self.fam
        A = d.a

        def solve_t0_or(s):
            fit = fit_pre_outcome(d, fam, spec)
            return {"tau0": fit.tau, "gamma0": fit.gamma, "alpha_or": fit.alpha}

        def solve_t0_ps(s):
            fit = fit_pre_eps(d, spec)
            return {"eta0": fit.eta, "alpha_ps": fit.alpha_ps}

        def ps_rows(s):
            coef = np.concatenate([s["eta0"], s["alpha_ps"]])
            return self._ps_design * (A - expit(self._ps_design @ coef))[:, None]

        def dr_in(s):
            return dr_inputs(d, spec, s["eta0"], _outcome(fam.name, s["tau0"], s["gamma0"]))

        def solve_or(s):
            inp = dr_in(s)
            return {"alpha0": solve_alpha_dr(d, spec, inp.pi0_ref, inp.m0, start=s["alpha_or"])}

        def or_rows(s):
            inp = dr_in(s)
            return or_moment_obs(d, spec, s["alpha0"], inp.pi0_ref, inp.m0)

        def solve_t1_or(s):
            fit = fit_post_outcome_control(d, fam)
            return {"tau1": fit.tau, "gamma1": fit.gamma}

        def eta_block(name, alpha_name):
            return MomentBlock(
                f"t1_ps_{name}", (f"eta1_{name}",),
                lambda s: eta1_moment_obs(d, spec, s[alpha_name], s[f"eta1_{name}"], delta),
                depends=(alpha_name,),
                solve=lambda s: {f"eta1_{name}": solve_eta1(d, spec, s[alpha_name], delta=delta)})

        def glm_rows(s):
            return A * (self._xi(s, s["alpha_or"], delta) - s["psi0_glm"][0])

        def glm_solve(s):
            return {"psi0_glm": np.mean(self._xi(s, s["alpha_or"], delta)[A == 1])}

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
            est = dr_att(d, spec, s["alpha0"], s["eta1_dr"], xi, delta=delta)
            return {"psi0_dr": est.psi0}

        return [
            MomentBlock("effect0_glm", ("psi0_glm",), glm_rows, ("tau1", "gamma1", "alpha_or"), glm_solve),
            MomentBlock("effect0_ipw", ("psi0_ipw",), ipw_rows, ("eta1_ipw", "alpha_ps"), ipw_solve),
            MomentBlock("effect0_dr", ("psi0_dr",), dr_rows,
                        ("tau1", "gamma1", "alpha0", "eta1_dr"), dr_solve),
            MomentBlock("effect1", ("psi1",), lambda s: A * (d.y1 - s["psi1"][0]), (),
                        lambda s: {"psi1": np.mean(d.y1[A == 1])}),
            MomentBlock("t0_or", ("tau0", "gamma0", "alpha_or"),
                        lambda s: self._reorder0(self._m0.score_obs(self._theta0(s))), (), solve_t0_or),
            MomentBlock("t0_ps", ("eta0", "alpha_ps"), ps_rows, (), solve_t0_ps),
            MomentBlock("odds_ratio", ("alpha0",), or_rows, ("eta0", "tau0", "gamma0", "alpha_or"),
                        solve_or),
            MomentBlock("t1_or", ("tau1", "gamma1"),
                        lambda s: self._ctrl[:, None] * self._reorder1(self._m1.score_obs(self._theta1(s))),
                        (), solve_t1_or),
            eta_block("ipw", "alpha_ps"),
            eta_block("dr", "alpha0"),
        ]

    def _reorder0(self, rows):
        # internal order (zeta, [phi], alpha) -> stack order (tau, gamma, alpha)
        p = self.d.p
        cols = [0] + ([1 + p] if self.fam.name == "gaussian" else []) + list(range(1, 1 + p))
        rest = list(range(len(cols), rows.shape[1]))
        return rows[:, cols + rest]

    def _reorder1(self, rows):
        return self._reorder0(rows)

    def diagnostics(self, estimator, theta):
        out = {}
        for name in ("alpha_or", "alpha_ps", "alpha0"):
            if name in theta:
                out[name] = theta[name].tolist()
        return out


def fit_udid(d: PanelDataset, family="gaussian", spec: LogLinear | None = None, contrast="additive",
             level: float = 0.95, estimators=UDID_ESTIMATORS, delta: float = 0.0) -> StackFit:
    """Fit the requested UDiD estimators and return their reports."""
    return UdidModel(d, family, spec, contrast, level, estimators).fit(delta)
