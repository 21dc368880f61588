"""Dichotomized analysis of extreme-only samples.

Upper-versus-lower tail membership is treated as a binary response and
modeled with logistic regression. Simple and widely used, but the cutoff
choice enters the parameters directly, so estimates are not comparable
across designs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RegressionView, TestResult

__all__ = ["dichotomize", "LogisticFit", "fit_logistic", "score_test_logistic"]

_SEPARATION_BOUND = 30.0


def dichotomize(view: RegressionView, c_l: float, c_u: float) -> np.ndarray:
    """0 for rows below c_l, 1 for rows above c_u; rows between are an error."""
    y = view.y
    inside = (y >= c_l) & (y <= c_u)
    if np.any(inside):
        bad = np.nonzero(inside)[0][:5]
        raise ValueError(f"rows {bad.tolist()} are inside ({c_l}, {c_u})")
    return (y > c_u).astype(float)


@dataclass
class LogisticFit:
    intercept: float
    coef: np.ndarray
    names: tuple
    observed_information: np.ndarray
    loglik: float
    converged: bool
    iterations: int


def _logistic_loglik(yb, xmat, beta):
    eta = xmat @ beta
    # log(1 + e^eta) without overflow
    log1pexp = np.where(eta > 30, eta, np.log1p(np.exp(np.minimum(eta, 30))))
    return float(yb @ eta - np.sum(log1pexp))


def fit_logistic(
    yb, columns, names=None, tol: float = 1e-10, max_iter: int = 100
) -> LogisticFit:
    """Logistic regression by iteratively reweighted least squares.

    Step-halving keeps the log-likelihood nondecreasing. Divergence of any
    coefficient past +-30 is treated as (quasi-)complete separation and
    raises with the offending column named.
    """
    yb = np.asarray(yb, dtype=float)
    if not (np.any(yb == 0) and np.any(yb == 1)):
        raise ValueError("both response classes must be present")
    x = np.asarray(columns, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, p = x.shape
    names = tuple(names) if names is not None else tuple(f"b{j}" for j in range(p))
    xmat = np.column_stack([np.ones(n), x])

    beta = np.zeros(p + 1)
    ll = _logistic_loglik(yb, xmat, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = xmat @ beta
        pi = 1.0 / (1.0 + np.exp(-eta))
        w = pi * (1.0 - pi)
        grad = xmat.T @ (yb - pi)
        hess = xmat.T @ (w[:, None] * xmat)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ValueError("design matrix is rank deficient") from None
        # step-halving on likelihood decrease
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            ll_new = _logistic_loglik(yb, xmat, cand)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        assert ll_new >= ll - 1e-9, "log-likelihood decreased across an IRLS step"
        delta = float(np.max(np.abs(cand - beta)))
        beta, ll = cand, ll_new
        big = np.nonzero(np.abs(beta) > _SEPARATION_BOUND)[0]
        if big.size:
            j = int(big[0])
            col = "intercept" if j == 0 else names[j - 1]
            raise ValueError(
                f"coefficient for {col!r} diverged; the classes are separated"
            )
        if delta < tol:
            converged = True
            break

    eta = xmat @ beta
    pi = 1.0 / (1.0 + np.exp(-eta))
    w = pi * (1.0 - pi)
    info = xmat.T @ (w[:, None] * xmat)
    return LogisticFit(
        intercept=float(beta[0]),
        coef=beta[1:],
        names=names,
        observed_information=info,
        loglik=ll,
        converged=converged,
        iterations=it,
    )


def score_test_logistic(yb, null_columns, tested_columns) -> TestResult:
    """Rao score test of tested columns against a fitted null logistic model.

    S = X0'(y - pi0); the variance is the usual weighted Schur complement
    with W = diag(pi0 (1 - pi0)).
    """
    yb = np.asarray(yb, dtype=float)
    n = yb.size
    x0 = np.asarray(tested_columns, dtype=float)
    if x0.ndim == 1:
        x0 = x0.reshape(-1, 1)
    xn_raw = (
        np.asarray(null_columns, dtype=float)
        if null_columns is not None
        else np.empty((n, 0))
    )
    if xn_raw.ndim == 1:
        xn_raw = xn_raw.reshape(-1, 1)
    fit = fit_logistic(yb, xn_raw) if xn_raw.size else fit_logistic(yb, np.empty((n, 0)))
    xn = np.column_stack([np.ones(n), xn_raw])
    beta = np.concatenate([[fit.intercept], fit.coef])
    pi = 1.0 / (1.0 + np.exp(-(xn @ beta)))
    w = pi * (1.0 - pi)

    s = x0.T @ (yb - pi)
    wx0 = w[:, None] * x0
    sigma = x0.T @ wx0 - (xn.T @ wx0).T @ np.linalg.solve(xn.T @ (w[:, None] * xn), xn.T @ wx0)
    sigma = 0.5 * (sigma + sigma.T)
    if np.linalg.cond(sigma) > 1e12:
        raise ValueError("score variance is singular; tested columns are degenerate")
    stat = float(s @ np.linalg.solve(sigma, s))
    return TestResult.from_chi2(stat, x0.shape[1], "score")
