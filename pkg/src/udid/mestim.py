"""Stacked estimating equations, sandwich covariance and delta-method intervals.

A :class:`StackedSystem` is a list of :class:`MomentBlock` objects. Each block
owns one or more named parameter blocks, returns per-unit moment rows
given a full :class:`ParameterStack`, and can usually solve for its own
parameters once its upstream blocks are known. Solving proceeds block by
block in dependency order; inference uses one joint sandwich

    Sigma = V1^{-1} V2 V1^{-T},   V1 = mean dPsi/dtheta,   V2 = mean Psi Psi'

so the variance of every downstream quantity accounts for the estimation
of everything upstream of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from ._solvers import forward_jacobian, newton_root
from .data_model import ParameterStack, as_contrast, contrast_eval
from .errors import ConvergenceError, SeparationError, SingularMatrixError, UdidError

RESIDUAL_TOL = 1e-7
COND_LIMIT = 1e12


@dataclass(frozen=True)
class MomentBlock:
    """One block of estimating equations.

    Attributes
    ----------
    name : block label used in diagnostics.
    params : parameter-block names this moment determines.
    psi : ``psi(stack) -> (n, k)`` per-unit moment rows.
    depends : parameter-block names read by ``psi`` besides ``params``.
    solve : optional ``solve(stack) -> {param: values}``; when absent the
        block is solved by damped Newton on its own parameters.
    """

    name: str
    params: tuple
    psi: Callable
    depends: tuple = ()
    solve: Callable | None = None
    scale: float = 1.0

    def rows(self, stack: ParameterStack) -> np.ndarray:
        out = np.asarray(self.psi(stack), dtype=float)
        out = out.reshape(out.shape[0], -1)
        return out if self.scale == 1.0 else self.scale * out


@dataclass
class StackedSystem:
    blocks: list
    n: int
    order: list = field(init=False)

    def __post_init__(self):
        if self.n <= 0:
            raise UdidError("a stacked system needs at least one unit")
        owner = {}
        for blk in self.blocks:
            for p in blk.params:
                if p in owner:
                    raise ValueError(f"parameter {p!r} is solved by both {owner[p]} and {blk.name}")
                owner[p] = blk.name
        by_name = {b.name: b for b in self.blocks}
        deps = {}
        for blk in self.blocks:
            missing = [p for p in blk.depends if p not in owner]
            if missing:
                raise ValueError(f"block {blk.name} depends on unsolved parameters {missing}")
            deps[blk.name] = {owner[p] for p in blk.depends} - {blk.name}
        order, done = [], set()
        while len(order) < len(self.blocks):
            ready = [b for b in self.blocks if b.name not in done and deps[b.name] <= done]
            if not ready:
                raise ValueError("moment blocks have a cyclic dependency")
            for b in ready:
                order.append(by_name[b.name])
                done.add(b.name)
        self.order = order

    def owner_of(self, param: str) -> MomentBlock:
        for blk in self.blocks:
            if param in blk.params:
                return blk
        raise KeyError(param)

    def stacked_rows(self, stack: ParameterStack) -> np.ndarray:
        """Per-unit stacked moments in parameter-stack order, shape (n, dim)."""
        cols = np.empty((self.n, stack.size))
        for blk in self.blocks:
            rows = blk.rows(stack)
            idx = np.concatenate([np.arange(stack.size)[stack.index(p)] for p in blk.params])
            if rows.shape != (self.n, idx.size):
                raise ValueError(f"block {blk.name} returns shape {rows.shape}, "
                                 f"expected {(self.n, idx.size)}")
            cols[:, idx] = rows
        return cols

    def mean_moment(self, stack: ParameterStack) -> np.ndarray:
        return np.mean(self.stacked_rows(stack), axis=0)


def _solve_block(blk: MomentBlock, stack: ParameterStack) -> ParameterStack:
    if blk.solve is not None:
        return stack.replace(**blk.solve(stack))
    sizes = [stack[p].size for p in blk.params]
    x0 = np.concatenate([stack[p] for p in blk.params])

    def unpack(x):
        parts, start = {}, 0
        for p, s in zip(blk.params, sizes):
            parts[p] = x[start:start + s]
            start += s
        return parts

    res = newton_root(lambda x: np.mean(blk.rows(stack.replace(**unpack(x))), axis=0), x0)
    if not res.converged:
        raise ConvergenceError("Newton iterations did not converge", blk.name)
    return stack.replace(**unpack(res.x))


def solve_stack(system: StackedSystem, init: ParameterStack, method: str = "sequential",
                skip=()) -> ParameterStack:
    """Solve all blocks; ``skip`` names blocks whose values in ``init`` are kept.

    ``method="joint"`` runs damped Newton on the whole stack instead.
    """
    if method == "joint":
        res = newton_root(lambda v: system.mean_moment(ParameterStack.from_vector(init, v)),
                          init.values)
        if not res.converged:
            raise ConvergenceError("joint Newton did not converge", "stack")
        stack = ParameterStack.from_vector(init, res.x)
    else:
        stack = init
        for blk in system.order:
            if blk.name in skip:
                continue
            try:
                stack = _solve_block(blk, stack)
            except ConvergenceError as exc:
                if exc.block is not None:
                    raise
                if isinstance(exc, SeparationError):
                    raise SeparationError(str(exc), exc.component, blk.name) from exc
                raise ConvergenceError(str(exc), blk.name) from exc
            except (UdidError, ValueError, ArithmeticError) as exc:
                raise ConvergenceError(f"{type(exc).__name__}: {exc}", blk.name) from exc
    resid = system.mean_moment(stack)
    worst = int(np.argmax(np.abs(resid))) if resid.size else 0
    if resid.size and abs(resid[worst]) > RESIDUAL_TOL:
        name = system.owner_of(stack.name_at(worst)).name
        raise ConvergenceError(f"stacked residual {abs(resid[worst]):.3g} exceeds tolerance", name)
    return stack


@dataclass(frozen=True)
class Sandwich:
    cov: np.ndarray  # asymptotic covariance of sqrt(n)(theta_hat - theta)
    bread: np.ndarray  # V1
    meat: np.ndarray  # V2
    labels: tuple


def sandwich(system: StackedSystem, theta: ParameterStack, rel_step: float = 1e-6) -> Sandwich:
    """Sandwich covariance with a forward-difference bread."""
    rows = system.stacked_rows(theta)
    meat = rows.T @ rows / system.n
    f0 = rows.mean(axis=0)
    bread = forward_jacobian(
        lambda v: system.mean_moment(ParameterStack.from_vector(theta, v)), theta.values, rel_step, f0)
    labels = tuple(theta.label(i) for i in range(theta.size))
    cond = np.linalg.cond(bread)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        _, s, vt = np.linalg.svd(bread)
        weak = vt[-1]
        directions = [labels[i] for i in np.argsort(-np.abs(weak))[:3]]
        raise SingularMatrixError(
            f"bread matrix is near singular (condition {cond:.3g}); weakest directions: {directions}",
            directions)
    inv = np.linalg.inv(bread)
    cov = inv @ meat @ inv.T
    return Sandwich(0.5 * (cov + cov.T), bread, meat, labels)


def z_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def delta_ci(estimate: float, grad, cov2, n: int, level: float = 0.95):
    """Delta-method standard error and two-sided interval.

    ``cov2`` is the 2x2 covariance of sqrt(n)(psi0, psi1); ``grad`` the
    contrast gradient.
    """
    v = np.asarray(grad, dtype=float)
    q = float(v @ np.asarray(cov2, dtype=float) @ v)
    if q < 0:
        if q > -1e-14 * max(1.0, np.abs(cov2).max()):
            q = 0.0
        else:
            raise ArithmeticError(f"negative variance {q:.3g} in the delta method")
    se = float(np.sqrt(q / n))
    z = z_quantile(level)
    return se, estimate - z * se, estimate + z * se


@dataclass
class EstimationReport:
    estimator: str
    contrast: str
    psi0: float
    psi1: float
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    level: float
    n: int
    n_treated: int
    params: ParameterStack | None = None
    cov: np.ndarray | None = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimand(self) -> str:
        return "ATT" if self.contrast == "additive" else "ATT ratio"

    def record(self) -> dict:
        out = {
            "estimator": self.estimator, "estimand": self.estimand, "estimate": self.estimate,
            "se": self.se, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "n": self.n,
            "n_treated": self.n_treated, "converged": self.converged,
            "psi0": self.psi0, "psi1": self.psi1,
        }
        for key in ("crude", "debias"):
            if key in self.diagnostics:
                out[key] = self.diagnostics[key]
        if "error" in self.diagnostics:
            out["error"] = self.diagnostics["error"]
        return out


def failed_report(estimator, contrast, n, n_treated, level, message) -> EstimationReport:
    nan = float("nan")
    return EstimationReport(estimator, as_contrast(contrast).kind, nan, nan, nan, nan, nan, nan,
                            level, n, n_treated, converged=False, diagnostics={"error": message})


def report_from_stack(estimator: str, theta: ParameterStack, sand: Sandwich, psi0_name: str,
                      psi1_name: str, contrast, level: float, n: int, n_treated: int,
                      diagnostics=None) -> EstimationReport:
    """Build a report for (psi0, psi1) read from a solved stack."""
    c = as_contrast(contrast)
    psi0, psi1 = float(theta[psi0_name][0]), float(theta[psi1_name][0])
    est, grad = contrast_eval(c, psi0, psi1)
    i0, i1 = theta.index(psi0_name).start, theta.index(psi1_name).start
    cov2 = sand.cov[np.ix_([i0, i1], [i0, i1])]
    se, lo, hi = delta_ci(est, grad, cov2, n, level)
    return EstimationReport(estimator, c.kind, psi0, psi1, float(est), se, lo, hi, level, n,
                            n_treated, theta, sand.cov, True, dict(diagnostics or {}))
