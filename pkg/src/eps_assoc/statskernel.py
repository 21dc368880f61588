"""Scalar distributions, a quasi-Newton maximizer and numerical derivatives.

Everything here is a pure function; no shared state, safe to call from any
number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "norm_pdf",
    "norm_cdf",
    "norm_logcdf",
    "norm_quantile",
    "chi2_sf",
    "OptimizerReport",
    "maximize",
    "finite_diff_gradient",
    "finite_diff_hessian",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_pdf(x):
    """Standard normal density, vectorized."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    out = -0.5 * x * x - _LOG_SQRT_2PI
    return float(out) if out.ndim == 0 else out


def norm_cdf(x):
    """Standard normal cdf via the complementary error function.

    Accurate in both tails (the tail is computed directly from erfc rather
    than as 1 minus the opposite tail).
    """
    x = np.asarray(x, dtype=float)
    out = 0.5 * special.erfc(-x / np.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def norm_logcdf(x):
    """log Phi(x), stable for large negative x."""
    x = np.asarray(x, dtype=float)
    out = special.log_ndtr(x)
    return float(out) if out.ndim == 0 else out


def norm_quantile(p: float) -> float:
    """Inverse of norm_cdf on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile probability must be in (0,1), got {p}")
    return float(special.ndtri(p))


def chi2_sf(t, df: int):
    """Upper tail probability P(X > t) for X ~ chi-square(df)."""
    if df < 1:
        raise ValueError(f"df must be a positive integer, got {df}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("chi-square statistic must be nonnegative")
    out = special.gammaincc(df / 2.0, t / 2.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class OptimizerReport:
    """Outcome of a smooth maximization.

    observed_information is the negative Hessian of the objective at the
    argmax, computed by central finite differences on the gradient.
    """

    argmax: np.ndarray
    max_value: float
    converged: bool
    iterations: int
    gradient_norm: float
    observed_information: np.ndarray


def finite_diff_gradient(
    objective: Callable[[np.ndarray], float],
    point: Sequence[float],
    step: float | None = None,
) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(point, dtype=float)
    n = x.size
    g = np.empty(n)
    for i in range(n):
        h = step if step is not None else _fd_step(x[i])
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (objective(xp) - objective(xm)) / (2.0 * h)
    return g


def finite_diff_hessian(
    gradient: Callable[[np.ndarray], np.ndarray],
    point: Sequence[float],
    step: float | None = None,
) -> np.ndarray:
    """Central differences of a gradient function; symmetrized."""
    x = np.asarray(point, dtype=float)
    n = x.size
    hess = np.empty((n, n))
    for i in range(n):
        h = step if step is not None else _fd_step(x[i])
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        hess[i] = (np.asarray(gradient(xp)) - np.asarray(gradient(xm))) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def _fd_step(xi: float) -> float:
    # cube root of machine epsilon scaled by coordinate magnitude
    return float(np.finfo(float).eps ** (1.0 / 3.0) * max(1.0, abs(xi)))


class NonFiniteObjectiveError(RuntimeError):
    """Objective stayed non-finite through the whole backtracking sweep."""


def maximize(
    objective: Callable[[np.ndarray], float],
    init: Sequence[float],
    gradient: Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float = 1e-8,
    ftol: float = 1e-12,
    max_iter: int = 500,
    information: bool = True,
) -> OptimizerReport:
    """Maximize a smooth function with BFGS and a backtracking line search.

    The gradient is taken analytically if supplied, by central differences
    otherwise. A non-finite objective value during the line search triggers
    step backtracking; if no finite value is found along the ray the run
    aborts with NonFiniteObjectiveError. Non-convergence within max_iter is
    reported through the converged flag, never silently.
    """
    x = np.asarray(init, dtype=float).copy()
    f0 = objective(x)
    if not np.isfinite(f0):
        raise NonFiniteObjectiveError("objective is non-finite at the initial point")

    grad = gradient if gradient is not None else (
        lambda z: finite_diff_gradient(objective, z)
    )

    n = x.size
    hinv = np.eye(n)  # inverse-Hessian approximation of the *negative* objective
    f = -f0
    g = -np.asarray(grad(x), dtype=float)
    converged = False
    iterations = 0
    first_update = True
    stalled = 0

    for iterations in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= gtol:
            converged = True
            iterations -= 1
            break

        d = -hinv @ g
        if d @ g >= 0.0:  # not a descent direction; reset curvature
            hinv = np.eye(n)
            d = -g

        step, f_new, ok = _backtrack(lambda z: -objective(z), x, f, g, d)
        if not ok:
            break
        s = step * d
        x_new = x + s
        g_new = -np.asarray(grad(x_new), dtype=float)
        y = g_new - g

        sy = s @ y
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                hinv = (sy / (y @ y)) * np.eye(n)
                first_update = False
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, y)
            hinv = v @ hinv @ v.T + rho * np.outer(s, s)

        rel_change = abs(f - f_new) / max(1.0, abs(f_new))
        x, f, g = x_new, f_new, g_new
        # a stalled objective alone is not terminal: near the optimum the
        # value change underflows ftol while the gradient still shrinks
        # geometrically. Stop only when the gradient stagnates as well.
        stalled = stalled + 1 if rel_change <= ftol else 0
        gnorm = float(np.max(np.abs(g)))
        if stalled == 1:
            stall_gnorm = gnorm
        elif stalled >= 2:
            if gnorm > 0.5 * stall_gnorm:
                converged = gnorm <= gtol
                break
            stall_gnorm = gnorm
    else:
        iterations = max_iter

    gnorm = float(np.max(np.abs(g)))
    if gnorm <= gtol:
        converged = True
    info = None
    if information:
        info = -finite_diff_hessian(grad, x)
        info = 0.5 * (info + info.T)
    return OptimizerReport(
        argmax=x,
        max_value=-f,
        converged=converged,
        iterations=iterations,
        gradient_norm=gnorm,
        observed_information=info,
    )


def _backtrack(fmin, x, f, g, d, c1: float = 1e-4, max_halvings: int = 60):
    """Armijo backtracking on the minimization objective fmin."""
    slope = g @ d
    step = 1.0
    for _ in range(max_halvings):
        f_new = fmin(x + step * d)
        if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
            return step, f_new, True
        step *= 0.5
    # fall back: accept any finite strict decrease found at the last step
    f_new = fmin(x + step * d)
    if np.isfinite(f_new) and f_new < f:
        return step, f_new, True
    if not np.isfinite(f_new):
        raise NonFiniteObjectiveError(
            "objective remained non-finite along the search direction"
        )
    return 0.0, f, False
