"""Inference when genotypes are observed only for part of the sample.

Phenotype and environmental covariates are known for everyone; genotype
columns may be missing (at random given the observed data) for any subset
of rows. Missing genotypes contribute a finite mixture over the genotype
sample space weighted by a stratified multinomial genotype distribution.
Provides the joint maximum-likelihood fit, a closed-form score test for
genotype main effects, and a likelihood-ratio test for hypotheses whose
null retains missing-data terms (e.g. interactions).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .data import (
    Dataset,
    ExtremeDesign,
    FitResult,
    ModelSpec,
    ParameterVector,
    TestResult,
)
from .linear import ols_fit
from .statskernel import finite_diff_hessian, maximize, norm_logpdf

__all__ = [
    "GenotypeDistribution",
    "estimate_genotype_dist",
    "loglik_eps_full",
    "fit_eps_full",
    "score_test_eps_full",
    "lrt_eps_full",
]

GENOTYPE_LEVELS = np.array([0.0, 1.0, 2.0])


@dataclass(frozen=True)
class GenotypeDistribution:
    """Stratified multinomial distribution of one genotype column.

    p[j, k] is the probability of genotype level k in stratum j. counts and
    stratum_sizes are the complete-case cell counts behind a frequency
    estimate (zero for distributions specified directly).
    """

    p: np.ndarray
    counts: np.ndarray = None
    stratum_sizes: np.ndarray = None
    levels: np.ndarray = field(default_factory=lambda: GENOTYPE_LEVELS.copy())

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("genotype probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("each stratum's genotype probabilities must sum to 1")
        counts = self.counts
        if counts is None:
            counts = np.zeros_like(p)
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        sizes = self.stratum_sizes
        if sizes is None:
            sizes = counts.sum(axis=1)
        sizes = np.atleast_1d(np.asarray(sizes, dtype=float))
        levels = np.asarray(self.levels, dtype=float)
        if p.shape[1] != levels.size:
            raise ValueError("probability columns do not match genotype levels")
        for k, v in (("p", p), ("counts", counts), ("stratum_sizes", sizes), ("levels", levels)):
            object.__setattr__(self, k, v)

    @property
    def n_strata(self) -> int:
        return self.p.shape[0]

    @property
    def n_levels(self) -> int:
        return self.p.shape[1]

    def mean(self) -> np.ndarray:
        """E(genotype) per stratum."""
        return self.p @ self.levels

    def second_moment(self) -> np.ndarray:
        return self.p @ self.levels**2

    def variance(self) -> np.ndarray:
        return self.second_moment() - self.mean() ** 2

    @classmethod
    def from_hwe(cls, q, n_strata: int | None = None) -> "GenotypeDistribution":
        """Hardy-Weinberg probabilities ((1-q)^2, 2q(1-q), q^2) per stratum."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if n_strata is not None and q.size == 1:
            q = np.repeat(q, n_strata)
        if np.any((q <= 0) | (q >= 1)):
            raise ValueError("minor allele frequency must be in (0, 1)")
        p = np.column_stack([(1 - q) ** 2, 2 * q * (1 - q), q**2])
        return cls(p=p)


def estimate_genotype_dist(
    dataset: Dataset, snp: str, hwe: bool = False
) -> GenotypeDistribution:
    """Cell frequencies of one genotype column among its complete cases.

    Rows are grouped by the dataset's stratum labels; a stratum with no
    complete case is an error, a zero cell is allowed but flagged with a
    warning (it removes that mixture component). With hwe, the per-stratum
    allele frequency is turned into Hardy-Weinberg probabilities instead.
    """
    g = dataset.xg[:, dataset.snp_index(snp)]
    obs = ~np.isnan(g)
    strata = np.unique(dataset.strata)
    counts = np.zeros((strata.size, GENOTYPE_LEVELS.size))
    for j, label in enumerate(strata):
        sel = obs & (dataset.strata == label)
        if not np.any(sel):
            raise ValueError(
                f"stratum {label} has no complete case for genotype column {snp!r}"
            )
        for k, level in enumerate(GENOTYPE_LEVELS):
            counts[j, k] = np.sum(g[sel] == level)
    sizes = counts.sum(axis=1)
    if hwe:
        q = (counts @ GENOTYPE_LEVELS) / (2.0 * sizes)
        p = GenotypeDistribution.from_hwe(q).p
        return GenotypeDistribution(p=p, counts=counts, stratum_sizes=sizes)
    p = counts / sizes[:, None]
    if np.any(counts == 0):
        zero = [
            (int(strata[j]), int(GENOTYPE_LEVELS[k]))
            for j, k in zip(*np.nonzero(counts == 0))
        ]
        warnings.warn(
            f"genotype column {snp!r} has empty cells {zero}; "
            "the corresponding mixture components are dropped",
            stacklevel=2,
        )
    return GenotypeDistribution(p=p, counts=counts, stratum_sizes=sizes)


def _stratum_codes(dataset: Dataset) -> np.ndarray:
    return np.searchsorted(np.unique(dataset.strata), dataset.strata)


class _MixtureModel:
    """Precomputed structure for evaluating the missing-genotype likelihood.

    Splits rows into complete cases and missing-pattern groups, and for each
    group enumerates the genotype states of the missing columns with their
    log prior masses.
    """

    def __init__(self, dataset: Dataset, model_spec: ModelSpec, dists: dict):
        self.spec = model_spec
        self.names = model_spec.term_names()
        self.n_terms = len(self.names)
        self.y = dataset.y
        self.n = dataset.n_rows
        self.codes = _stratum_codes(dataset)
        self.snps = list(model_spec.snp_columns)
        for s in self.snps:
            if s not in dists:
                raise ValueError(f"no genotype distribution given for column {s!r}")
        self.dists = dists

        cols = {}
        for c in model_spec.env_columns:
            cols[f"e:{c}"] = dataset.xe[:, dataset.env_index(c)]
        gcols = {}
        for c in self.snps:
            gcols[c] = dataset.xg[:, dataset.snp_index(c)]
            cols[f"g:{c}"] = gcols[c]
        for e, g in model_spec.interaction_pairs:
            cols[f"eg:{e}*{g}"] = cols[f"e:{e}"] * gcols[g]
        self.x = np.column_stack([cols[t] for t in self.names]) if self.names else np.empty((self.n, 0))
        self.gcols = gcols

        miss = np.zeros((self.n, len(self.snps)), dtype=bool)
        for si, s in enumerate(self.snps):
            miss[:, si] = np.isnan(gcols[s])
        self.complete = ~miss.any(axis=1)
        # group mixture rows by missing pattern
        self.groups = []
        if not np.all(self.complete):
            rows_m = np.nonzero(~self.complete)[0]
            patterns = {}
            for i in rows_m:
                patterns.setdefault(tuple(np.nonzero(miss[i])[0]), []).append(i)
            for pat, rows in patterns.items():
                self.groups.append((pat, np.asarray(rows, dtype=int)))

        # observed-genotype cell bookkeeping: per snp, per row, the level
        # index where observed (-1 where missing)
        self.level_idx = {}
        for s in self.snps:
            g = gcols[s]
            idx = np.full(self.n, -1, dtype=int)
            o = ~np.isnan(g)
            idx[o] = np.searchsorted(self.dists[s].levels, g[o])
            self.level_idx[s] = idx

    def _state_matrices(self, pat, rows, dists):
        """Design matrices and per-row log prior mass for every state of the
        missing columns in a pattern group."""
        missing_snps = [self.snps[si] for si in pat]
        levelsets = [range(dists[s].n_levels) for s in missing_snps]
        out = []
        for state in itertools.product(*levelsets):
            x = self.x[rows].copy()
            logp = np.zeros(rows.size)
            for s, k in zip(missing_snps, state):
                d = dists[s]
                val = d.levels[k]
                x[:, self.names.index(f"g:{s}")] = val
                for e, g in self.spec.interaction_pairs:
                    if g == s:
                        j = self.names.index(f"eg:{e}*{g}")
                        x[:, j] = self.x[rows, self.names.index(f"e:{e}")] * val
                with np.errstate(divide="ignore"):
                    logp += np.log(d.p[self.codes[rows], k])
            out.append((x, logp))
        return out

    def _observed_log_mass(self, rows, dists) -> float:
        """Sum of log p(observed genotype cell) over given rows, all snps."""
        total = 0.0
        for s in self.snps:
            idx = self.level_idx[s][rows]
            o = idx >= 0
            if np.any(o):
                with np.errstate(divide="ignore"):
                    total += float(
                        np.sum(np.log(dists[s].p[self.codes[rows][o], idx[o]]))
                    )
        return total

    def loglik(self, coef: np.ndarray, sigma: float, dists=None) -> float:
        dists = self.dists if dists is None else dists
        y, x = self.y, self.x
        ll = -self.n * np.log(sigma)
        c = self.complete
        if np.any(c):
            mu = coef[0] + x[c] @ coef[1:]
            ll += float(np.sum(norm_logpdf((y[c] - mu) / sigma)))
            ll += self._observed_log_mass(np.nonzero(c)[0], dists)
        for pat, rows in self.groups:
            terms = []
            for xs, logp in self._state_matrices(pat, rows, dists):
                mu = coef[0] + xs @ coef[1:]
                terms.append(norm_logpdf((y[rows] - mu) / sigma) + logp)
            ll += float(np.sum(logsumexp(np.stack(terms), axis=0)))
            ll += self._observed_log_mass(rows, dists)
        return ll

    def grad_regression(self, coef: np.ndarray, sigma: float, dists=None) -> np.ndarray:
        """Analytic gradient in (intercept, coefficients, sigma)."""
        g_reg, _ = self.gradient(coef, sigma, dists)
        return g_reg

    def gradient(self, coef: np.ndarray, sigma: float, dists=None):
        """Gradient in (intercept, coefficients, sigma) plus, per snp, the
        expected per-stratum level counts (indicator for observed cells,
        posterior weight for missing ones) that drive the distribution
        gradient."""
        dists = self.dists if dists is None else dists
        y, x = self.y, self.x
        p = x.shape[1]
        g_coef = np.zeros(p + 1)
        g_sigma = -self.n / sigma
        counts = {
            s: np.zeros((dists[s].n_strata, dists[s].n_levels)) for s in self.snps
        }
        # observed cells contribute an indicator count wherever the snp is
        # observed (complete rows and partially missing ones alike)
        for s in self.snps:
            idx = self.level_idx[s]
            o = idx >= 0
            np.add.at(counts[s], (self.codes[o], idx[o]), 1.0)
        c = self.complete
        if np.any(c):
            mu = coef[0] + x[c] @ coef[1:]
            f = y[c] - mu
            g_coef[0] += np.sum(f) / sigma**2
            if p:
                g_coef[1:] += x[c].T @ f / sigma**2
            g_sigma += np.sum(f * f) / sigma**3
        for pat, rows in self.groups:
            mats = self._state_matrices(pat, rows, dists)
            missing_snps = [self.snps[si] for si in pat]
            levelsets = [range(dists[s].n_levels) for s in missing_snps]
            states = list(itertools.product(*levelsets))
            logw = np.stack(
                [
                    norm_logpdf((y[rows] - (coef[0] + xs @ coef[1:])) / sigma) + lp
                    for xs, lp in mats
                ]
            )
            w = np.exp(logw - logsumexp(logw, axis=0))
            for (xs, _), wk, state in zip(mats, w, states):
                mu = coef[0] + xs @ coef[1:]
                f = y[rows] - mu
                g_coef[0] += np.sum(wk * f) / sigma**2
                if p:
                    g_coef[1:] += xs.T @ (wk * f) / sigma**2
                g_sigma += np.sum(wk * f * f) / sigma**3
                for s, k in zip(missing_snps, state):
                    np.add.at(counts[s], (self.codes[rows], k), wk)
        return np.concatenate([g_coef, [g_sigma]]), counts


def _require_complete_in_design(
    dataset: Dataset, design: ExtremeDesign | None, spec: ModelSpec
):
    if design is None:
        return
    rows = design.indices()
    for s in spec.snp_columns:
        g = dataset.xg[rows, dataset.snp_index(s)]
        if np.any(np.isnan(g)):
            raise ValueError(
                f"genotype column {s!r} is missing inside the extreme set; "
                "extreme rows must be genotyped"
            )


def loglik_eps_full(
    params: ParameterVector,
    dataset: Dataset,
    design: ExtremeDesign | None,
    dists: dict,
    model_spec: ModelSpec,
) -> float:
    """Observed-data log-likelihood with missing genotypes mixed out.

    Complete rows contribute a normal density times their genotype cell
    mass; rows with a missing genotype contribute a log-sum-exp mixture
    over the genotype states weighted by dists (one GenotypeDistribution
    per model genotype column).
    """
    if not params.sigma > 0:
        raise ValueError("sigma must be positive")
    _require_complete_in_design(dataset, design, model_spec)
    model = _MixtureModel(dataset, model_spec, dists)
    flat = params.flat()
    coef = flat[:-1]
    if coef.size != model.n_terms + 1:
        raise ValueError(
            f"parameter vector has {coef.size - 1} coefficients for "
            f"{model.n_terms} model columns"
        )
    return model.loglik(coef, params.sigma)


def _p_to_logits(p: np.ndarray) -> np.ndarray:
    # softmax logits relative to the first level; clipped away from 0 cells
    q = np.clip(p, 1e-10, 1.0)
    return np.log(q[:, 1:] / q[:, [0]]).ravel()


def _logits_to_p(z: np.ndarray, n_strata: int, n_levels: int) -> np.ndarray:
    z = z.reshape(n_strata, n_levels - 1)
    full = np.column_stack([np.zeros(n_strata), z])
    full -= logsumexp(full, axis=1, keepdims=True)
    return np.exp(full)


def fit_eps_full(
    dataset: Dataset,
    design: ExtremeDesign | None,
    model_spec: ModelSpec,
    fix_p: bool = False,
    hwe: bool = False,
    ci_level: float = 0.95,
    gtol: float = 1e-8,
    max_iter: int = 500,
    init: np.ndarray | None = None,
    information: bool = True,
) -> FitResult:
    """Joint maximum likelihood over the regression parameters and the
    genotype distributions.

    Genotype probabilities start at their complete-case frequencies and are
    co-optimized through per-stratum softmax logits unless fix_p holds them
    there. The observed information covers every free parameter, so Wald
    intervals account for the estimated genotype distribution.
    """
    _require_complete_in_design(dataset, design, model_spec)
    dists = {
        s: estimate_genotype_dist(dataset, s, hwe=hwe) for s in model_spec.snp_columns
    }
    model = _MixtureModel(dataset, model_spec, dists)
    p_terms = model.n_terms + 1

    # layout of the free vector: coef (p_terms), log sigma, then logits per snp
    logit_slices = {}
    pos = p_terms + 1
    z0_parts = []
    for s in model.snps:
        d = dists[s]
        size = d.n_strata * (d.n_levels - 1)
        logit_slices[s] = slice(pos, pos + size)
        z0_parts.append(_p_to_logits(d.p))
        pos += size
    n_free = pos if not fix_p else p_terms + 1

    def dists_at(theta):
        if fix_p:
            return dists
        out = {}
        for s in model.snps:
            d = dists[s]
            out[s] = GenotypeDistribution(
                p=_logits_to_p(theta[logit_slices[s]], d.n_strata, d.n_levels),
                counts=d.counts,
                stratum_sizes=d.stratum_sizes,
                levels=d.levels,
            )
        return out

    def obj(theta):
        return model.loglik(
            theta[:p_terms], float(np.exp(theta[p_terms])), dists_at(theta)
        )

    def grad(theta):
        d = dists_at(theta)
        sigma = float(np.exp(theta[p_terms]))
        g_reg, counts = model.gradient(theta[:p_terms], sigma, d)
        g_reg[-1] *= sigma
        if fix_p:
            return g_reg
        g = np.zeros(theta.size)
        g[: p_terms + 1] = g_reg
        # softmax chain rule: d loglik / d z_{jk} = count_{jk} - N_j p_{jk}
        for s in model.snps:
            cnt = counts[s]
            dz = cnt - cnt.sum(axis=1, keepdims=True) * d[s].p
            g[logit_slices[s]] = dz[:, 1:].ravel()
        return g

    if init is None:
        init = _mixture_init(dataset, model, model_spec)
    theta0 = np.concatenate([init] + ([] if fix_p else z0_parts))
    report = maximize(obj, theta0, gradient=grad, gtol=gtol, max_iter=max_iter, information=False)
    theta = report.argmax
    converged = report.converged

    # Newton polish: BFGS can stall on the relative-change stop while the
    # gradient is still above gtol on this likelihood's large scale
    if not converged:
        ll = report.max_value
        g = grad(theta)
        for _ in range(10):
            if float(np.max(np.abs(g))) <= gtol:
                break
            info_opt = -finite_diff_hessian(grad, theta)
            try:
                step = np.linalg.solve(info_opt, g)
            except np.linalg.LinAlgError:
                break
            cand = theta + step
            ll_cand = obj(cand)
            if not np.isfinite(ll_cand) or ll_cand < ll - 1e-8 * max(1.0, abs(ll)):
                break
            theta, ll = cand, ll_cand
            g = grad(theta)
        converged = float(np.max(np.abs(g))) <= gtol
        report = replace(report, argmax=theta, max_value=obj(theta), converged=converged)
    sigma = float(np.exp(theta[p_terms]))

    # observed information in the natural (coef, sigma, logits) coordinates
    nat = theta.copy()
    nat[p_terms] = sigma

    def obj_nat(t):
        tt = t.copy()
        tt[p_terms] = np.log(t[p_terms])
        return obj(tt)

    info = None
    if information:
        info = -finite_diff_hessian(lambda t: _num_grad(obj_nat, t), nat)
    names = ["intercept"] + list(model.names) + ["sigma"]
    if not fix_p:
        for s in model.snps:
            d = dists[s]
            for j in range(d.n_strata):
                for k in range(1, d.n_levels):
                    names.append(f"logit:{s}|s{j}:{int(d.levels[k])}")
    return FitResult(
        names=names,
        estimates=nat,
        observed_information=info,
        loglik=report.max_value,
        converged=report.converged,
        ci_level=ci_level,
    )


def _num_grad(f, x):
    from .statskernel import finite_diff_gradient

    return finite_diff_gradient(f, x)


def _mixture_init(dataset: Dataset, model: _MixtureModel, spec: ModelSpec) -> np.ndarray:
    """OLS start with per-column mean imputation of missing genotypes."""
    x = model.x.copy()
    for j in range(x.shape[1]):
        col = x[:, j]
        bad = np.isnan(col)
        if np.any(bad):
            col[bad] = np.nanmean(col) if np.any(~bad) else 0.0
    xmat = np.column_stack([np.ones(model.n), x])
    coef, *_ = np.linalg.lstsq(xmat, dataset.y, rcond=None)
    resid = dataset.y - xmat @ coef
    sigma = float(np.sqrt(max(resid @ resid / model.n, 1e-12)))
    return np.concatenate([coef, [np.log(sigma)]])


def score_test_eps_full(
    dataset: Dataset,
    design: ExtremeDesign | None,
    model_spec: ModelSpec,
    hwe: bool = False,
    null_fit: FitResult | None = None,
) -> TestResult:
    """Closed-form score test of genotype main effects under missingness.

    The null model is an ordinary linear regression over all rows (it may
    contain no terms with missing observations); the score and its variance
    plug complete-case genotype moments into the evaluated-at-null
    information blocks, including the correction for the estimated genotype
    distribution.
    """
    tested = list(model_spec.tested_terms)
    if not tested:
        raise ValueError("model spec declares no tested terms")
    for t in tested:
        if not t.startswith("g:"):
            raise ValueError(
                f"closed-form test only covers genotype main effects; {t!r} must "
                "be tested with the likelihood-ratio test"
            )
    tested_snps = [t[2:] for t in tested]
    _require_complete_in_design(dataset, design, model_spec)

    null_spec = model_spec.drop_tested()
    for s in null_spec.snp_columns:
        if np.any(np.isnan(dataset.xg[:, dataset.snp_index(s)])):
            raise ValueError(
                f"null-model genotype column {s!r} has missing values; "
                "use the likelihood-ratio test"
            )
    for e, g in null_spec.interaction_pairs:
        if g in tested_snps:
            raise ValueError(
                f"null model keeps interaction {e}*{g} with a tested column"
            )

    n = dataset.n_rows
    y = dataset.y
    codes = _stratum_codes(dataset)

    # null design: intercept + all null-model columns, fully observed
    null_cols = []
    for c in null_spec.env_columns:
        null_cols.append(dataset.xe[:, dataset.env_index(c)])
    for c in null_spec.snp_columns:
        null_cols.append(dataset.xg[:, dataset.snp_index(c)])
    for e, g in null_spec.interaction_pairs:
        null_cols.append(
            dataset.xe[:, dataset.env_index(e)] * dataset.xg[:, dataset.snp_index(g)]
        )
    xn = np.column_stack([np.ones(n)] + null_cols) if null_cols else np.ones((n, 1))
    coef, *_ = np.linalg.lstsq(xn, y, rcond=None)
    f = y - xn @ coef
    sigma2 = float(f @ f) / n
    if sigma2 <= 0:
        raise ValueError("null model fits the response exactly")

    m = len(tested_snps)
    gmat = np.column_stack(
        [dataset.xg[:, dataset.snp_index(s)] for s in tested_snps]
    )
    miss = np.isnan(gmat)
    partial = miss.any(axis=1) & ~miss.all(axis=1)
    if np.any(partial):
        raise ValueError(
            "rows with partially missing tested genotypes are not supported by "
            "the closed-form test"
        )
    complete = ~miss.any(axis=1)

    dists = {s: estimate_genotype_dist(dataset, s, hwe=hwe) for s in tested_snps}
    for s, d in dists.items():
        if np.any(d.stratum_sizes < 2):
            raise ValueError(
                f"a stratum has fewer than 2 complete cases for {s!r}; "
                "its genotype variance is undefined"
            )
    means = np.column_stack([dists[s].mean() for s in tested_snps])  # J x m
    e2 = np.column_stack([dists[s].second_moment() for s in tested_snps])
    var = np.column_stack([dists[s].variance() for s in tested_snps])
    sizes = dists[tested_snps[0]].stratum_sizes

    # expected genotype columns fill in for missing rows
    gtilde = gmat.copy()
    mi = np.nonzero(~complete)[0]
    gtilde[mi] = means[codes[mi]]

    s_vec = gtilde.T @ f / sigma2

    # tested-block information
    i_gg = gtilde[complete].T @ gtilde[complete]
    # independent snps: cross moments are products of means; marginal second
    # moments replace the diagonal
    for i in mi:
        mj = means[codes[i]]
        block = np.outer(mj, mj)
        np.fill_diagonal(block, e2[codes[i]])
        i_gg += block
    i_gg /= sigma2
    i_gg -= np.einsum("i,ijk->jk", f[mi] ** 2, _var_blocks(var, codes[mi])) / sigma2**2

    # nuisance block: (intercept+null columns, sigma)
    q = xn.shape[1]
    i_tt = np.zeros((q + 1, q + 1))
    i_tt[:q, :q] = xn.T @ xn / sigma2
    i_tt[:q, q] = 2.0 * (xn.T @ f) / sigma2**1.5
    i_tt[q, :q] = i_tt[:q, q]
    i_tt[q, q] = 2.0 * n / sigma2
    i_tg = np.zeros((q + 1, m))
    i_tg[:q] = xn.T @ gtilde / sigma2
    i_tg[q] = 2.0 * (f @ gtilde) / sigma2**1.5

    sigma_mat = i_gg - i_tg.T @ np.linalg.solve(i_tt, i_tg)

    # correction for the estimated genotype distribution: per stratum, the
    # squared sum of missing-row residuals times Var(genotype)/N_j
    for j in range(means.shape[0]):
        rows_j = mi[codes[mi] == j]
        if rows_j.size == 0:
            continue
        c2 = float(np.sum(f[rows_j])) ** 2
        sigma_mat -= c2 * np.diag(var[j] / sizes[j]) / sigma2**2

    sigma_mat = 0.5 * (sigma_mat + sigma_mat.T)
    if np.linalg.cond(sigma_mat) > 1e12:
        raise ValueError(
            f"score variance is singular; tested columns {tested_snps} are "
            "degenerate or collinear with the null design"
        )
    stat = float(s_vec @ np.linalg.solve(sigma_mat, s_vec))
    return TestResult.from_chi2(stat, m, "score")


@dataclass(frozen=True)
class _ScanNull:
    """SNP-independent pieces of the closed-form score test, computed once
    when many genotype columns are tested against the same null regression."""

    xn: np.ndarray
    f: np.ndarray
    sigma2: float
    itt_inv: np.ndarray
    codes: np.ndarray
    n_strata: int


def _scan_null(y: np.ndarray, xe: np.ndarray, strata: np.ndarray) -> _ScanNull:
    n = y.size
    xn = np.column_stack([np.ones(n), xe]) if xe.size else np.ones((n, 1))
    coef, *_ = np.linalg.lstsq(xn, y, rcond=None)
    f = y - xn @ coef
    sigma2 = float(f @ f) / n
    if sigma2 <= 0:
        raise ValueError("null model fits the response exactly")
    q = xn.shape[1]
    i_tt = np.zeros((q + 1, q + 1))
    i_tt[:q, :q] = xn.T @ xn / sigma2
    i_tt[:q, q] = 2.0 * (xn.T @ f) / sigma2**1.5
    i_tt[q, :q] = i_tt[:q, q]
    i_tt[q, q] = 2.0 * n / sigma2
    labels = np.unique(strata)
    codes = np.searchsorted(labels, strata)
    return _ScanNull(
        xn=xn,
        f=f,
        sigma2=sigma2,
        itt_inv=np.linalg.inv(i_tt),
        codes=codes,
        n_strata=labels.size,
    )


def _scan_score(g: np.ndarray, null: _ScanNull, hwe: bool = False) -> TestResult:
    """Score test of one genotype column against a precomputed null."""
    miss = np.isnan(g)
    complete = ~miss
    gc = g[complete]
    if np.any((gc < 0) | (gc > 2) | (gc != np.round(gc))):
        raise ValueError("observed genotypes must be coded 0, 1 or 2")
    jc = null.codes[complete]
    counts = np.bincount(
        jc * 3 + gc.astype(int), minlength=null.n_strata * 3
    ).reshape(null.n_strata, 3).astype(float)
    sizes = counts.sum(axis=1)
    if np.any(sizes < 2):
        raise ValueError(
            "a stratum has fewer than 2 complete cases; "
            "its genotype variance is undefined"
        )
    p = counts / sizes[:, None]
    if hwe:
        p = GenotypeDistribution.from_hwe((counts @ GENOTYPE_LEVELS) / (2.0 * sizes)).p
    mean = p @ GENOTYPE_LEVELS
    e2 = p @ GENOTYPE_LEVELS**2
    var = e2 - mean**2

    f, sigma2 = null.f, null.sigma2
    gtilde = g.copy()
    mcodes = null.codes[miss]
    gtilde[miss] = mean[mcodes]
    s = float(gtilde @ f) / sigma2
    fm = f[miss]
    i_gg = (float(gc @ gc) + float(np.sum(e2[mcodes]))) / sigma2
    i_gg -= float(fm**2 @ var[mcodes]) / sigma2**2
    i_tg = np.concatenate(
        [null.xn.T @ gtilde / sigma2, [2.0 * float(f @ gtilde) / sigma2**1.5]]
    )
    v = i_gg - float(i_tg @ null.itt_inv @ i_tg)
    sums = np.bincount(mcodes, weights=fm, minlength=null.n_strata)
    v -= float(np.sum(sums**2 * var / sizes)) / sigma2**2
    if not np.isfinite(v) or v <= 0:
        raise ValueError("score variance is not positive; degenerate genotype column")
    return TestResult.from_chi2(s * s / v, 1, "score")


def _var_blocks(var: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Diagonal per-row genotype covariance blocks (independent snps)."""
    out = np.zeros((codes.size, var.shape[1], var.shape[1]))
    idx = np.arange(var.shape[1])
    out[:, idx, idx] = var[codes]
    return out


def _multinomial_max_loglik(dataset: Dataset, snp: str, hwe: bool) -> float:
    """Maximized log-likelihood of one genotype column's observed cells
    under the per-stratum (or Hardy-Weinberg) probability estimate."""
    dist = estimate_genotype_dist(dataset, snp, hwe=hwe)
    counts = dist.counts
    logp = np.where(counts > 0, np.log(np.where(dist.p > 0, dist.p, 1.0)), 0.0)
    return float(np.sum(counts * logp))


def lrt_eps_full(
    dataset: Dataset,
    design: ExtremeDesign | None,
    null_spec: ModelSpec,
    alt_spec: ModelSpec,
    hwe: bool = False,
) -> TestResult:
    """Likelihood-ratio test between nested missing-genotype models.

    Both models are fitted by maximizing the observed-data likelihood. When
    a genotype column leaves the null model entirely (all its coefficients
    under test), its genotype-probability factor separates from the rest of
    the null likelihood, so the null maximum adds the closed-form
    multinomial term for that column. If optimizer noise leaves the
    alternative below the null, the alternative is restarted from the null
    solution; a residual negative statistic is clamped to zero with a
    warning.
    """
    null_terms = set(null_spec.term_names())
    alt_terms = set(alt_spec.term_names())
    if not null_terms <= alt_terms:
        raise ValueError("null model terms must be a subset of the alternative's")
    df = len(alt_terms) - len(null_terms)
    if df == 0:
        raise ValueError("null and alternative models have the same terms")

    # the statistic only needs the two maxima; tight gradient norms and the
    # information matrix are skipped (loglik error is quadratic in the
    # gradient norm)
    fit0 = fit_eps_full(
        dataset, design, null_spec, hwe=hwe, gtol=1e-4, information=False
    )
    # genotype columns absent from the null: both likelihoods must cover the
    # same observed data, so the separated multinomial maximum is added
    dropped_loglik = sum(
        _multinomial_max_loglik(dataset, snp, hwe)
        for snp in alt_spec.snp_columns
        if snp not in null_spec.snp_columns
    )
    fit1 = fit_eps_full(
        dataset,
        design,
        alt_spec,
        hwe=hwe,
        gtol=1e-4,
        information=False,
        init=_pad_init(fit0, null_spec, alt_spec),
    )
    loglik0 = fit0.loglik + dropped_loglik
    lam = 2.0 * (fit1.loglik - loglik0)
    if lam < 0:
        # retry the alternative from a cold start
        fit1 = fit_eps_full(
            dataset, design, alt_spec, hwe=hwe, gtol=1e-4, information=False
        )
        lam = 2.0 * (fit1.loglik - loglik0)
    if lam < 0:
        warnings.warn(
            f"likelihood-ratio statistic {lam:.3e} clamped to 0", stacklevel=2
        )
        lam = 0.0
    res = TestResult.from_chi2(lam, df, "lrt")
    if not (fit0.converged and fit1.converged):
        warnings.warn("a likelihood-ratio model fit did not converge", stacklevel=2)
    return res


def _pad_init(fit0: FitResult, null_spec: ModelSpec, alt_spec: ModelSpec) -> np.ndarray:
    alt_names = alt_spec.term_names()
    coef = np.zeros(len(alt_names) + 1)
    coef[0] = fit0.by_name("intercept")
    for i, t in enumerate(alt_names):
        if t in null_spec.term_names():
            coef[i + 1] = fit0.by_name(t)
    return np.concatenate([coef, [np.log(fit0.by_name("sigma"))]])
