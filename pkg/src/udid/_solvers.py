"""Newton-type optimizers and root finders used by every fitting routine.

All objective functions are *means* over units, so tolerances are
comparable across sample sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit, log_expit, logsumexp

from .errors import ConvergenceError, SeparationError, SingularMatrixError

MAX_ITER = 100
GRAD_TOL = 1e-8
MAX_HALVINGS = 40
POLISH_STEPS = 3


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    converged: bool
    n_iter: int
    path: list = field(default_factory=list)


@dataclass
class RootResult:
    x: np.ndarray
    residual: np.ndarray
    converged: bool
    n_iter: int


def _solve(matrix, rhs):
    try:
        step = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(matrix, rhs, rcond=None)[0]
    if not np.all(np.isfinite(step)):
        step = np.linalg.lstsq(matrix, rhs, rcond=None)[0]
    return step


def newton_maximize(objective: Callable, x0, max_iter=MAX_ITER, tol=GRAD_TOL) -> OptimResult:
    """Maximize a smooth concave-ish objective by Newton steps with halving.

    ``objective(theta, derivs)`` returns the value when ``derivs`` is false
    and ``(value, gradient, hessian)`` otherwise. An infeasible point must
    return ``-inf`` as its value. Accepted steps never decrease the value.
    """
    x = np.array(x0, dtype=float)
    value, grad, hess = objective(x, True)
    if not np.isfinite(value):
        raise ConvergenceError("objective is not finite at the starting point")
    path = [value]
    for it in range(max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) <= tol:
            x, value, grad = _polish_max(objective, x, value, grad, hess)
            return OptimResult(x, value, grad, True, it, path)
        if it == max_iter:
            break
        step = _solve(-hess, grad)
        # Fall back to gradient ascent if the Newton direction is not uphill.
        if not np.dot(step, grad) > 0:
            step = grad.copy()
        t = 1.0
        slack = 1e-13 * (1.0 + abs(value))
        for _ in range(MAX_HALVINGS):
            trial = x + t * step
            trial_value = objective(trial, False)
            if np.isfinite(trial_value) and trial_value >= value - slack:
                break
            t *= 0.5
        else:
            break
        x = trial
        value, grad, hess = objective(x, True)
        path.append(value)
    return OptimResult(x, value, grad, bool(np.max(np.abs(grad), initial=0.0) <= tol), it, path)


def _polish_max(objective, x, value, grad, hess):
    """Extra full Newton steps past the tolerance, kept only while the gradient shrinks."""
    for _ in range(POLISH_STEPS):
        if not np.any(grad):
            break
        trial = x + _solve(-hess, grad)
        t_value, t_grad, t_hess = objective(trial, True)
        if not (np.isfinite(t_value) and np.max(np.abs(t_grad)) < np.max(np.abs(grad))):
            break
        x, value, grad, hess = trial, t_value, t_grad, t_hess
    return x, value, grad


def forward_jacobian(fun: Callable, x, rel_step=1e-6, f0=None) -> np.ndarray:
    """Forward-difference Jacobian with step ``rel_step * (1 + |x_j|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x) if f0 is None else f0, dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        shifted = x.copy()
        shifted[j] += rel_step * (1.0 + abs(x[j]))
        h = shifted[j] - x[j]  # the step actually taken after rounding
        jac[:, j] = (np.asarray(fun(shifted), dtype=float) - f0) / h
    return jac


def newton_root(fun: Callable, x0, jac: Callable | None = None, max_iter=MAX_ITER,
                tol=GRAD_TOL, rel_step=1e-6) -> RootResult:
    """Damped Newton for ``fun(x) = 0``; the residual norm never increases."""
    x = np.array(x0, dtype=float)
    f = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(f)):
        raise ConvergenceError("moment is not finite at the starting point")
    for it in range(max_iter + 1):
        if np.max(np.abs(f), initial=0.0) <= tol:
            for _ in range(POLISH_STEPS):
                if not np.any(f):
                    break
                J = jac(x) if jac is not None else forward_jacobian(fun, x, rel_step, f)
                try:
                    trial = x + np.linalg.solve(J, -f)
                except np.linalg.LinAlgError:
                    break
                f_trial = np.asarray(fun(trial), dtype=float)
                if not (np.all(np.isfinite(f_trial)) and np.max(np.abs(f_trial)) < np.max(np.abs(f))):
                    break
                x, f = trial, f_trial
            return RootResult(x, f, True, it)
        if it == max_iter:
            break
        J = jac(x) if jac is not None else forward_jacobian(fun, x, rel_step, f)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise SingularMatrixError("Jacobian is singular during root finding")
        step = np.linalg.solve(J, -f)
        norm = np.linalg.norm(f)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = x + t * step
            f_trial = np.asarray(fun(trial), dtype=float)
            if np.all(np.isfinite(f_trial)) and np.linalg.norm(f_trial) < norm:
                break
            t *= 0.5
        else:
            break
        x, f = trial, f_trial
    return RootResult(x, f, bool(np.max(np.abs(f), initial=0.0) <= tol), it)


def _normalized(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def separating_direction(design, y):
    """Return a direction that separates a binary response, or ``None``.

    Solves the linear program of Konis (complete/quasi-complete separation):
    maximize sum_i s_i d_i'b subject to s_i d_i'b >= 0 and |b| <= 1.
    """
    s = np.where(np.asarray(y) > 0.5, 1.0, -1.0)
    signed = design * s[:, None]
    res = linprog(-signed.sum(axis=0), A_ub=-signed, b_ub=np.zeros(len(s)),
                  bounds=[(-1, 1)] * design.shape[1], method="highs")
    if res.status == 0 and -res.fun > 1e-7 * max(1.0, np.abs(design).max()):
        return res.x
    return None


@dataclass
class LogisticFit:
    coef: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    path: list


def logistic_mle(design, y, weights=None, names=None, max_iter=MAX_ITER, tol=GRAD_TOL) -> LogisticFit:
    """Weighted logistic regression MLE (mean log-likelihood scale)."""
    D = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    w = _normalized(weights, len(y))

    def objective(beta, derivs):
        eta = D @ beta
        value = float(np.sum(w * (y * eta + log_expit(-eta))))
        if not derivs:
            return value
        p = expit(eta)
        grad = D.T @ (w * (y - p))
        hess = -(D * (w * p * (1 - p))[:, None]).T @ D
        return value, grad, hess

    res = newton_maximize(objective, np.zeros(D.shape[1]), max_iter, tol)
    eta = D @ res.x
    if not res.converged or np.max(np.abs(eta[w > 0]), initial=0.0) > 10:
        rows = w > 0
        direction = separating_direction(D[rows], y[rows])
        if direction is not None:
            j = int(np.argmax(np.abs(direction)))
            label = names[j] if names is not None else f"coefficient {j}"
            raise SeparationError(f"logistic likelihood is unbounded along {label}", component=label)
    if not res.converged:
        raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")
    return LogisticFit(res.x, res.value, res.converged, res.n_iter, res.path)


@dataclass
class MultinomialFit:
    coef: np.ndarray  # (K-1, q); reference category has implicit zero row
    loglik: float
    converged: bool
    n_iter: int


def multinomial_probs(design, coef):
    """Baseline-category probabilities, shape (n, K); column 0 is the reference."""
    eta = np.column_stack([np.zeros(design.shape[0]), design @ coef.T])
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def multinomial_mle(design, category, n_categories, weights=None, start=None,
                    max_iter=MAX_ITER, tol=GRAD_TOL) -> MultinomialFit:
    """Baseline-category logit MLE; ``category`` takes values 0..K-1."""
    D = np.asarray(design, dtype=float)
    n, q = D.shape
    K = n_categories
    w = _normalized(weights, n)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), np.asarray(category, dtype=int)] = 1.0

    def objective(flat, derivs):
        coef = flat.reshape(K - 1, q)
        eta = np.column_stack([np.zeros(n), D @ coef.T])
        lse = logsumexp(eta, axis=1)
        value = float(np.sum(w * (np.sum(onehot * eta, axis=1) - lse)))
        if not derivs:
            return value
        P = np.exp(eta - lse[:, None])[:, 1:]
        grad = ((onehot[:, 1:] - P) * w[:, None]).T @ D
        cov = -np.einsum("ik,il->ikl", P, P)
        idx = np.arange(K - 1)
        cov[:, idx, idx] += P
        hess = -np.einsum("ikl,ia,ib->kalb", cov * w[:, None, None], D, D)
        return value, grad.ravel(), hess.reshape((K - 1) * q, (K - 1) * q)

    x0 = np.zeros((K - 1) * q) if start is None else np.asarray(start, float).ravel()
    res = newton_maximize(objective, x0, max_iter, tol)
    coef = res.x.reshape(K - 1, q)
    eta = D[w > 0] @ coef.T
    if not res.converged or np.max(np.abs(eta), initial=0.0) > 25:
        k, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
        raise SeparationError(
            f"multinomial likelihood is unbounded (category {k + 2}, column {j})",
            component=(int(k) + 2, int(j)))
    return MultinomialFit(coef, res.value, res.converged, res.n_iter)
