"""Multi-start maximization over the unit sphere.

Objectives handed to :func:`maximize_on_sphere` must be homogeneous of degree
zero (f(αx) = f(x) for α > 0).  Their gradient is then tangent to the sphere,
which lets the quasi-Newton polish run unconstrained and normalize at the end.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

# line-search stalls near an optimum are expected in the polish, whose result is
# only kept if it improves; catch_warnings is not thread-safe, so filter globally
warnings.filterwarnings("ignore", message="The line search algorithm did not converge")

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class SphereMax:
    value: float
    point: np.ndarray
    n_starts: int
    iterations: int
    stalled: int = 0
    warnings: list = field(default_factory=list)


def _ascend(fun: Objective, x: np.ndarray, tol: float, max_iter: int):
    x = x / np.linalg.norm(x)
    val, g = fun(x)
    step = 1.0
    for it in range(1, max_iter + 1):
        gt = g - np.dot(g, x) * x
        gnorm = np.linalg.norm(gt)
        if gnorm <= tol * max(abs(val), 1e-300):
            return val, x, it, True
        improved = False
        for _ in range(60):
            cand = x + (step / gnorm) * gt
            cand /= np.linalg.norm(cand)
            cval, cg = fun(cand)
            if cval > val:
                improved = True
                break
            step *= 0.5
        if not improved:
            return val, x, it, True
        gain = cval - val
        x, val, g = cand, cval, cg
        step = min(2.0 * step, 1.0)
        if gain <= tol * max(abs(val), 1e-300):
            return val, x, it, True
    return val, x, max_iter, False


def _polish(fun: Objective, x: np.ndarray, val: float):
    def neg(y):
        v, g = fun(y)
        return -v, -g

    try:
        res = minimize(neg, x, jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 400})
    except (ValueError, ZeroDivisionError, FloatingPointError):
        return val, x
    if not np.all(np.isfinite(res.x)) or not np.any(res.x):
        return val, x
    y = res.x / np.linalg.norm(res.x)
    v = fun(y)[0]
    return (v, y) if v > val else (val, x)


def maximize_on_sphere(
    fun: Objective,
    dim: int,
    rng: np.random.Generator,
    n_random: int = 16,
    extra_starts=(),
    tol: float = 1e-6,
    max_iter: int = 500,
    polish: bool = True,
    n_polish: int = 4,
) -> SphereMax:
    """Best local maximum of ``fun`` over unit vectors of R^dim.

    ``fun`` returns ``(value, gradient)``.  Starts are ``n_random`` Gaussian
    directions followed by ``extra_starts``.  Each start runs projected
    gradient ascent with backtracking until the relative gain drops below
    ``tol`` (or ``max_iter`` steps); the ``n_polish`` best end points are
    then refined by BFGS and the best result wins.
    """
    starts = [rng.standard_normal(dim) for _ in range(n_random)]
    starts.extend(np.asarray(s, dtype=float) for s in extra_starts)
    runs = []
    total_iter = 0
    stalled = 0
    for s in starts:
        if not np.any(s):
            continue
        val, x, it, converged = _ascend(fun, s, tol, max_iter)
        total_iter += it
        stalled += not converged
        runs.append((val, x))
    runs.sort(key=lambda r: r[0], reverse=True)
    if polish:
        runs[:n_polish] = [_polish(fun, x, val) for val, x in runs[:n_polish]]
    best = max(runs, key=lambda r: r[0])
    res = SphereMax(best[0], best[1], len(starts), total_iter, stalled)
    if stalled == len(starts):
        res.warnings.append(f"all {len(starts)} starts stopped at the {max_iter}-iteration cap before polishing")
    return res
