"""Ordinary linear-model fitting and the Rao score test.

Used directly for fully observed and randomly sampled data, and as the
shared null model of the genotype-missingness score test.
"""

from __future__ import annotations

import numpy as np

from .data import FitResult, TestResult

__all__ = ["ols_fit", "linear_score_test"]


def _with_intercept(x: np.ndarray, n: int) -> np.ndarray:
    return np.column_stack([np.ones(n), x]) if x.size else np.ones((n, 1))


def ols_fit(y, x, names=None, ci_level=0.95) -> FitResult:
    """Least squares with Gaussian ML variance (rss/n) and Wald intervals.

    The information matrix covers (intercept, coefficients, sigma) in that
    order; the sigma row is included so interval construction matches the
    likelihood-based fitters.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    xmat = _with_intercept(np.asarray(x, dtype=float), n)
    p = xmat.shape[1]
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows to fit {p} coefficients")
    coef, *_ = np.linalg.lstsq(xmat, y, rcond=None)
    resid = y - xmat @ coef
    sigma2 = float(resid @ resid) / n
    sigma = float(np.sqrt(sigma2))
    loglik = -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0)

    info = np.zeros((p + 1, p + 1))
    info[:p, :p] = xmat.T @ xmat / sigma2
    info[p, p] = 2.0 * n / sigma2  # -d2l/dsigma2 at the MLE
    names = list(names) if names is not None else [f"b{j}" for j in range(p - 1)]
    return FitResult(
        names=["intercept"] + names + ["sigma"],
        estimates=np.concatenate([coef, [sigma]]),
        observed_information=info,
        loglik=float(loglik),
        converged=True,
        ci_level=ci_level,
    )


def linear_score_test(y, x0, x1=None) -> TestResult:
    """Score (Rao) test of the x0 coefficients in a normal linear model.

    The null model regresses y on an intercept and x1; the statistic is
    r' x0 (x0' M x0)^{-1} x0' r / sigma0^2 with M the residual maker of the
    null design and sigma0^2 the ML residual variance under the null.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0.reshape(-1, 1)
    xn = _with_intercept(
        np.asarray(x1, dtype=float) if x1 is not None else np.empty((n, 0)), n
    )
    coef, *_ = np.linalg.lstsq(xn, y, rcond=None)
    resid = y - xn @ coef
    sigma2 = float(resid @ resid) / n
    if sigma2 <= 1e-12 * max(float(y @ y) / n, np.finfo(float).tiny):
        raise ValueError("null model fits the response exactly; score test undefined")

    s = x0.T @ resid / sigma2
    xtx0 = x0.T @ x0
    cross = x0.T @ xn
    gram = xn.T @ xn
    sigma = (xtx0 - cross @ np.linalg.solve(gram, cross.T)) / sigma2
    try:
        stat = float(s @ np.linalg.solve(sigma, s))
        bad = not np.isfinite(stat) or stat < 0
    except np.linalg.LinAlgError:
        bad = True
    if bad or np.linalg.cond(sigma) > 1e12:
        raise ValueError(
            "score variance is singular; tested columns are collinear with the null design"
        )
    return TestResult.from_chi2(stat, x0.shape[1], "score")
