"""Inference from extreme-only samples.

A linear model is assumed to hold in the full population, but only rows
with the trait below c_l or above c_u are observed. The conditional
(two-sided truncated normal) likelihood corrects for the sampling, and the
score test has a closed form built from per-row tail-ratio functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import FitResult, ParameterVector, RegressionView, TestResult
from .statskernel import (
    maximize,
    norm_logcdf,
    norm_logpdf,
)

__all__ = [
    "loglik_eps_only",
    "fit_eps_only",
    "score_test_eps_only",
    "EpsOnlyScoreWorkspace",
    "tail_ratios",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_tail_mass(u: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """log(1 - Phi(u) + Phi(lo)), computed from the two tail log-cdfs.

    Stays finite for cutoffs many sigma away from the mean, where the direct
    expression would round to log(0).
    """
    return logsumexp(np.stack([norm_logcdf(-u), norm_logcdf(lo)]), axis=0)


def tail_ratios(u: np.ndarray, lo: np.ndarray):
    """Per-row tail ratio moments h0..h3.

    h_j = (-phi(u) u^j + phi(lo) lo^j) / (1 - Phi(u) + Phi(lo)), with each
    term formed as exp(log phi - log mass) so deep truncation cannot
    underflow the ratio.
    """
    logmass = log_tail_mass(u, lo)
    tu = np.exp(norm_logpdf(u) - logmass)
    tl = np.exp(norm_logpdf(lo) - logmass)
    h = [-tu * u**j + tl * lo**j for j in range(4)]
    return h, logmass


def _mu(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    return coef[0] + x @ coef[1:]


def _loglik_terms(y, x, cl, cu, coef, sigma):
    mu = _mu(x, coef)
    r = (y - mu) / sigma
    u = (cu - mu) / sigma
    lo = (cl - mu) / sigma
    logmass = log_tail_mass(u, lo)
    return mu, r, u, lo, logmass


def _loglik(y, x, cl, cu, coef, sigma) -> float:
    _, r, _, _, logmass = _loglik_terms(y, x, cl, cu, coef, sigma)
    return float(np.sum(norm_logpdf(r) - np.log(sigma) - logmass))


def _gradient(y, x, cl, cu, coef, sigma) -> np.ndarray:
    """Analytic gradient in (coefficients, sigma); intercept first."""
    mu, r, u, lo, _ = _loglik_terms(y, x, cl, cu, coef, sigma)
    (h0, h1, _, _), _ = tail_ratios(u, lo)
    f = y - mu
    w = f / sigma**2 + h0 / sigma
    n = y.size
    g_alpha = np.sum(w)
    g_beta = x.T @ w
    g_sigma = -n / sigma + np.sum(f * f) / sigma**3 + np.sum(h1) / sigma
    return np.concatenate([[g_alpha], g_beta, [g_sigma]])


def _hessian(y, x, cl, cu, coef, sigma) -> np.ndarray:
    """Analytic Hessian in (coefficients, sigma); exact at any parameter.

    Per row: coefficient block -a/sigma^2, cross terms -2f/sigma^3 - b/sigma^2,
    sigma-sigma -c/sigma^2 - 3 f^2/sigma^4, with a, b, c the tail-ratio
    weights.
    """
    mu, _, u, lo, _ = _loglik_terms(y, x, cl, cu, coef, sigma)
    (h0, h1, h2, h3), _ = tail_ratios(u, lo)
    f = y - mu
    a = 1.0 - h1 - h0**2
    b = h0 - h2 - h0 * h1
    c = -1.0 + 2.0 * h1 - h3 - h1**2
    xm = np.column_stack([np.ones(y.size), x])
    s2 = sigma**2
    p = xm.shape[1]
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = -(xm.T @ (a[:, None] * xm)) / s2
    hess[:p, p] = xm.T @ (-2.0 * f / sigma**3 - b / s2)
    hess[p, :p] = hess[:p, p]
    hess[p, p] = np.sum(-c / s2 - 3.0 * f * f / s2**2)
    return hess


def _newton(y, x, cl, cu, theta, max_iter):
    """Newton iterations in natural (coefficients, sigma) coordinates.

    Returns the final parameter vector and gradient sup-norm.
    """
    theta = theta.copy()
    f_cur = _loglik(y, x, cl, cu, theta[:-1], theta[-1])
    if not np.isfinite(f_cur):
        return theta, np.inf
    g = _gradient(y, x, cl, cu, theta[:-1], theta[-1])
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= 1e-12:
            break
        h = _hessian(y, x, cl, cu, theta[:-1], theta[-1])
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            break
        accepted = False
        for _ in range(30):
            cand = theta + step
            if cand[-1] > 0:
                f_cand = _loglik(y, x, cl, cu, cand[:-1], cand[-1])
                if np.isfinite(f_cand) and f_cand >= f_cur - 1e-9 * max(
                    1.0, abs(f_cur)
                ):
                    theta, f_cur, accepted = cand, f_cand, True
                    break
            step *= 0.5
        if not accepted:
            break
        g = _gradient(y, x, cl, cu, theta[:-1], theta[-1])
    return theta, float(np.max(np.abs(g)))


def _check_extreme_rows(y, cl, cu):
    inside = (y >= cl) & (y <= cu)
    if np.any(inside):
        bad = np.nonzero(inside)[0][:5]
        raise ValueError(
            f"rows {bad.tolist()} have trait values inside ({cl}, {cu}); "
            "the extreme-only likelihood is undefined for them"
        )


def loglik_eps_only(
    params: ParameterVector, view: RegressionView, c_l: float, c_u: float
) -> float:
    """Conditional log-likelihood of the extreme rows in a view.

    Each row contributes log phi(r) - log sigma - log(tail mass); the
    coefficients are taken from params in canonical term order.
    """
    if not params.sigma > 0:
        raise ValueError("sigma must be positive")
    coef = params.flat()[:-1]
    if coef.size != view.x.shape[1] + 1:
        raise ValueError(
            f"parameter vector has {coef.size - 1} coefficients for "
            f"{view.x.shape[1]} model columns"
        )
    _check_extreme_rows(view.y, c_l, c_u)
    return _loglik(view.y, view.x, c_l, c_u, coef, params.sigma)


def _ols_init(y, x):
    xmat = np.column_stack([np.ones(y.size), x])
    coef, *_ = np.linalg.lstsq(xmat, y, rcond=None)
    resid = y - xmat @ coef
    sigma = float(np.sqrt(max(resid @ resid / y.size, 1e-12)))
    return coef, sigma


def _fit(y, x, cl, cu, names, gtol=1e-9, max_iter=500, ci_level=0.95) -> FitResult:
    n = y.size
    p = x.shape[1] + 1
    if n < p + 2:
        raise ValueError(f"need at least {p + 2} extreme rows to fit {p} coefficients")
    coef0, sigma0 = _ols_init(y, x)
    theta = np.concatenate([coef0, [sigma0]])
    theta, gnorm = _newton(y, x, cl, cu, theta, max_iter)

    if gnorm > 1e-6:
        # fall back to BFGS (log-sigma coordinate) and retry Newton from there
        def unpack(t):
            return t[:-1], float(np.exp(t[-1]))

        def obj(t):
            c, s = unpack(t)
            return _loglik(y, x, cl, cu, c, s)

        def grad(t):
            c, s = unpack(t)
            g = _gradient(y, x, cl, cu, c, s)
            g[-1] *= s  # chain rule for the log-sigma coordinate
            return g

        start = np.concatenate([coef0, [np.log(sigma0)]])
        report = maximize(
            obj, start, gradient=grad, gtol=max(gtol, 1e-6), max_iter=max_iter,
            information=False,
        )
        cand = report.argmax.copy()
        cand[-1] = np.exp(cand[-1])
        cand, cand_gnorm = _newton(y, x, cl, cu, cand, 25)
        if cand_gnorm < gnorm:
            theta, gnorm = cand, cand_gnorm

    coef, sigma = theta[:-1], float(theta[-1])
    converged = gnorm <= 1e-6
    est = np.concatenate([coef, [sigma]])
    info = -_hessian(y, x, cl, cu, coef, sigma)
    return FitResult(
        names=["intercept"] + list(names) + ["sigma"],
        estimates=est,
        observed_information=info,
        loglik=_loglik(y, x, cl, cu, coef, sigma),
        converged=bool(converged),
        ci_level=ci_level,
    )


def fit_eps_only(
    view: RegressionView, c_l: float, c_u: float, ci_level: float = 0.95
) -> FitResult:
    """Maximum likelihood for the extreme-only sample.

    Optimizes over (intercept, coefficients, log sigma) starting from OLS on
    the extreme rows, then reports the observed information in the sigma
    parameterization with Wald intervals.
    """
    _check_extreme_rows(view.y, c_l, c_u)
    return _fit(view.y, view.x, c_l, c_u, view.names, ci_level=ci_level)


@dataclass
class EpsOnlyScoreWorkspace:
    """Per-row ingredients of the closed-form score test at the null MLE."""

    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    residuals: np.ndarray
    score: np.ndarray
    score_variance: np.ndarray


def _null_workspace(y, x0, x1, cl, cu, null_fit: FitResult) -> EpsOnlyScoreWorkspace:
    est = null_fit.estimates
    coef, sigma = est[:-1], est[-1]
    mu = _mu(x1, coef)
    f = y - mu
    u = (cu - mu) / sigma
    lo = (cl - mu) / sigma
    (h0, h1, h2, h3), _ = tail_ratios(u, lo)
    # per-row conditional expected information weights: a for mu-mu,
    # b for mu-sigma, d for sigma-sigma (all y-free; d = c + 3)
    a = 1.0 - h1 - h0**2
    b = -h0 - h2 - h0 * h1
    c = -1.0 - h1 - h3 - h1**2
    d = 2.0 - h1 - h3 - h1**2

    s2 = sigma**2
    score = x0.T @ (f / s2 + h0 / sigma)

    # information blocks over (tested | intercept, nuisance, sigma)
    i00 = x0.T @ (a[:, None] * x0) / s2
    ones = np.ones_like(y)
    i_t0 = np.vstack(
        [
            a @ x0 / s2,
            x1.T @ (a[:, None] * x0) / s2,
            b @ x0 / s2,
        ]
    )
    q = x1.shape[1]
    i_tt = np.empty((q + 2, q + 2))
    i_tt[0, 0] = np.sum(a)
    i_tt[0, 1 : q + 1] = a @ x1
    i_tt[1 : q + 1, 0] = i_tt[0, 1 : q + 1]
    i_tt[1 : q + 1, 1 : q + 1] = x1.T @ (a[:, None] * x1)
    i_tt[0, q + 1] = np.sum(b)
    i_tt[q + 1, 0] = i_tt[0, q + 1]
    i_tt[1 : q + 1, q + 1] = b @ x1
    i_tt[q + 1, 1 : q + 1] = i_tt[1 : q + 1, q + 1]
    i_tt[q + 1, q + 1] = np.sum(d)
    i_tt /= s2

    sigma_mat = i00 - i_t0.T @ np.linalg.solve(i_tt, i_t0)
    sigma_mat = 0.5 * (sigma_mat + sigma_mat.T)
    return EpsOnlyScoreWorkspace(
        h0=h0, h1=h1, h2=h2, h3=h3, a=a, b=b, c=c, d=d,
        residuals=f, score=score, score_variance=sigma_mat,
    )


def score_test_eps_only(
    view: RegressionView,
    c_l: float,
    c_u: float,
    null_fit: FitResult | None = None,
) -> TestResult:
    """Closed-form score test of the tested columns in an extreme-only view.

    The null model (nuisance terms only) is fitted by maximum likelihood;
    the score vector and its variance are assembled from the tail-ratio
    weights a, b, d at the null estimate. A precomputed null fit may be
    passed when many tested columns share the same nuisance design.
    """
    if not view.tested_idx:
        raise ValueError("the view declares no tested terms")
    _check_extreme_rows(view.y, c_l, c_u)
    x0 = view.x0
    x1 = view.x1
    if null_fit is None:
        null_fit = _fit(view.y, x1, c_l, c_u, view.x1_names)
    ws = _null_workspace(view.y, x0, x1, c_l, c_u, null_fit)
    try:
        stat = float(ws.score @ np.linalg.solve(ws.score_variance, ws.score))
        cond_bad = not np.isfinite(stat) or stat < 0
    except np.linalg.LinAlgError:
        cond_bad = True
    if cond_bad or np.linalg.cond(ws.score_variance) > 1e12:
        raise ValueError(
            "score variance is singular; tested columns "
            f"{list(view.x0_names)} are collinear or constant within the extremes"
        )
    return TestResult.from_chi2(stat, x0.shape[1], "score")
