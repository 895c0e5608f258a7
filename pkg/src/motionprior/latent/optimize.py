"""Limited-memory BFGS with Armijo backtracking.

Every accepted step strictly decreases the objective, so the recorded history
is monotone. Trial points whose objective is non-finite (or whose evaluation
raises NumericalError) are treated as infeasible and the step is shrunk.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericalError, OptimizationDiverged

logger = logging.getLogger(__name__)

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    message: str
    history: list[float] = field(default_factory=list)


def _safe_eval(fun: FunGrad, x: np.ndarray) -> tuple[float, np.ndarray | None]:
    try:
        f, g = fun(x)
    except NumericalError:
        return np.inf, None
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), g


def minimize_lbfgs(
    fun: FunGrad,
    x0,
    max_iters: int = 500,
    gtol: float = 1e-5,
    memory: int = 10,
    c1: float = 1e-4,
    max_backtracks: int = 40,
) -> OptimizeResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops when the gradient infinity norm drops below ``gtol``, after
    ``max_iters`` accepted steps, or when no decrease can be found along the
    search direction.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationDiverged("non-finite objective at the initial point", iteration=0)
    history = [float(f)]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    message = "max iterations reached"
    converged = False
    it = 0
    while it < max_iters:
        if np.max(np.abs(g)) < gtol:
            converged, message = True, "gradient tolerance reached"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            q /= max(1.0, np.linalg.norm(g))
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        direction = -q
        slope = g @ direction
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            direction = -g / max(1.0, np.linalg.norm(g))
            slope = g @ direction

        step = 1.0
        for _ in range(max_backtracks):
            x_new = x + step * direction
            f_new, g_new = _safe_eval(fun, x_new)
            if f_new <= f + c1 * step * slope and f_new < f:
                break
            step *= 0.5
        else:
            converged, message = True, "no further decrease along search direction"
            break

        it += 1
        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if not np.isfinite(f):
            raise OptimizationDiverged("objective became non-finite", iteration=it)
        history.append(f)
    logger.debug("lbfgs: %s after %d iterations, f=%.6g", message, it, f)
    return OptimizeResult(x=x, fun=f, grad=g, n_iter=it, converged=converged, message=message, history=history)


def central_difference(fun: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (fun(xp) - fun(xm)) / (2 * h)
    return grad
