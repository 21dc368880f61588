"""Monte Carlo engine: cohort simulation, sampling designs, power and MSE.

Generates cohorts from a three-covariate linear model (binary exposure,
continuous exposure, additive genotype, optional gene-environment
interaction), applies a sampling design that decides who is genotyped, and
estimates rejection rates or the mean squared error of the genotype effect
over replicates. Replicates are seeded through spawned seed sequences, so
results are identical whether they run serially or across worker processes.
"""

from __future__ import annotations

import concurrent.futures
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    Dataset,
    ExtremeDesign,
    ModelSpec,
    build_design,
    select_extremes,
)
from .epsbinary import dichotomize, score_test_logistic
from .epsfull import fit_eps_full, lrt_eps_full, score_test_eps_full
from .epsonly import fit_eps_only, score_test_eps_only
from .linear import linear_score_test, ols_fit
from .statskernel import NonFiniteObjectiveError

__all__ = [
    "SimScenario",
    "DesignSpec",
    "SimResult",
    "simulate_dataset",
    "apply_design",
    "model_spec_for",
    "estimate_power",
    "estimate_mse",
    "power_curve",
]

MODELS = ("main-effects", "binary-interaction", "continuous-interaction")


@dataclass(frozen=True)
class SimScenario:
    """Cohort-generating model and its parameters.

    model picks the mean structure: "main-effects" has no interaction,
    "binary-interaction" adds beta_e1g * xe1 * xg, "continuous-interaction"
    adds beta_e2g * xe2 * xg. n is the genotyped-subset size handed to the
    sampling design.
    """

    model: str = "main-effects"
    n_total: int = 5000
    n: int = 2500
    alpha: float = 50.0
    beta_e1: float = 10.0
    beta_e2: float = 5.0
    beta_g: float = 0.5
    beta_e1g: float = 1.0
    beta_e2g: float = 0.5
    sigma: float = 6.0
    q: float = 0.3

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0 < self.q <= 0.5:
            raise ValueError(f"minor allele frequency must be in (0, 0.5], got {self.q}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 1 <= self.n <= self.n_total:
            raise ValueError(f"need 1 <= n <= n_total, got n={self.n}, N={self.n_total}")

    def genotype_probs(self) -> np.ndarray:
        q = self.q
        return np.array([(1 - q) ** 2, 2 * q * (1 - q), q**2])

    def mean(self, xe1, xe2, xg) -> np.ndarray:
        mu = self.alpha + self.beta_e1 * xe1 + self.beta_e2 * xe2 + self.beta_g * xg
        if self.model == "binary-interaction":
            mu = mu + self.beta_e1g * xe1 * xg
        elif self.model == "continuous-interaction":
            mu = mu + self.beta_e2g * xe2 * xg
        return mu


@dataclass(frozen=True)
class DesignSpec:
    """Which rows end up genotyped (and possibly retained).

    kind: "full" keeps everything; "random" keeps a random subsample of n
    rows; "rs-complete" keeps all rows but genotypes only a random n;
    "eps-only" keeps only the n phenotype-extreme rows; "eps-full" keeps
    all rows, genotyping only the phenotype extremes; "ees-only"/"ees-full"
    do the same with extremes of an exposure column; "combined" genotypes
    the union of n0 random rows and n_e phenotype-extreme rows.
    """

    kind: str = "eps-full"
    n: int | None = None
    n0: int | None = None
    n_e: int | None = None
    exposure: str = "e2"

    KINDS = (
        "full",
        "random",
        "rs-complete",
        "eps-only",
        "eps-full",
        "ees-only",
        "ees-full",
        "combined",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"design kind must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "combined":
            if self.n0 is None or self.n_e is None:
                raise ValueError("combined design needs n0 and n_e")
            if self.n is not None and self.n0 + self.n_e != self.n:
                raise ValueError(
                    f"combined design needs n0 + n_e = n, got {self.n0}+{self.n_e} != {self.n}"
                )


def simulate_dataset(scenario: SimScenario, seed=None, rng=None) -> Dataset:
    """One cohort of n_total rows; deterministic for a given seed."""
    if rng is None:
        rng = np.random.default_rng(seed)
    n = scenario.n_total
    xe1 = rng.binomial(1, 0.4, size=n).astype(float)
    xe2 = rng.normal(2.0, 1.0, size=n)
    xg = rng.choice(np.arange(3.0), size=n, p=scenario.genotype_probs())
    y = scenario.mean(xe1, xe2, xg) + rng.normal(0.0, scenario.sigma, size=n)
    return Dataset(
        y=y,
        xe=np.column_stack([xe1, xe2]),
        xg=xg.reshape(-1, 1),
        env_names=("e1", "e2"),
        snp_names=("g",),
    )


def model_spec_for(scenario: SimScenario, tested=None) -> ModelSpec:
    """Model matching the generating mean, testing its last-added term."""
    inter = ()
    default = ("g:g",)
    if scenario.model == "binary-interaction":
        inter = (("e1", "g"),)
        default = ("eg:e1*g",)
    elif scenario.model == "continuous-interaction":
        inter = (("e2", "g"),)
        default = ("eg:e2*g",)
    return ModelSpec(("e1", "e2"), ("g",), inter, tuple(tested or default))


def _subset(ds: Dataset, rows: np.ndarray) -> Dataset:
    return Dataset(
        y=ds.y[rows],
        xe=ds.xe[rows],
        xg=ds.xg[rows],
        strata=ds.strata[rows],
        env_names=ds.env_names,
        snp_names=ds.snp_names,
        ids=tuple(ds.ids[i] for i in rows) if ds.ids else (),
    )


def _mask_outside(ds: Dataset, keep: np.ndarray) -> Dataset:
    xg = ds.xg.copy()
    xg[~keep] = np.nan
    return Dataset(
        y=ds.y,
        xe=ds.xe,
        xg=xg,
        strata=ds.strata,
        env_names=ds.env_names,
        snp_names=ds.snp_names,
        ids=ds.ids,
    )


def apply_design(dataset: Dataset, spec: DesignSpec, n: int | None = None, rng=None):
    """Induce the design's row selection / genotype missingness.

    Returns (dataset, extreme design or None). Random choices come from rng
    (mandatory for random/rs-complete/combined).
    """
    big = dataset.n_rows
    n = spec.n if n is None else n
    if spec.kind == "full":
        return dataset, None
    if spec.kind == "combined":
        n = spec.n0 + spec.n_e
    if n is None:
        raise ValueError("design needs a genotyped count n")
    if n > big:
        raise ValueError(f"design requests {n} of {big} rows")

    if spec.kind == "random":
        rows = np.sort(rng.choice(big, size=n, replace=False))
        return _subset(dataset, rows), None
    if spec.kind == "rs-complete":
        rows = rng.choice(big, size=n, replace=False)
        keep = np.zeros(big, dtype=bool)
        keep[rows] = True
        return _mask_outside(dataset, keep), None
    if spec.kind == "eps-only":
        design = select_extremes(dataset.y, n // 2, n - n // 2)
        sub = _subset(dataset, design.indices())
        sub_design = ExtremeDesign(
            design.c_l, design.c_u, frozenset(range(sub.n_rows))
        )
        return sub, sub_design
    if spec.kind == "eps-full":
        design = select_extremes(dataset.y, n // 2, n - n // 2)
        return _mask_outside(dataset, design.mask(big)), design
    if spec.kind == "ees-only":
        e = dataset.xe[:, dataset.env_index(spec.exposure)]
        design = select_extremes(e, n // 2, n - n // 2)
        return _subset(dataset, design.indices()), None
    if spec.kind == "ees-full":
        e = dataset.xe[:, dataset.env_index(spec.exposure)]
        design = select_extremes(e, n // 2, n - n // 2)
        return _mask_outside(dataset, design.mask(big)), None
    # combined: n0 random rows, then the n_e most phenotype-extreme of the
    # remaining rows, so exactly n0 + n_e rows end up genotyped
    keep = np.zeros(big, dtype=bool)
    if spec.n0:
        keep[rng.choice(big, size=spec.n0, replace=False)] = True
    if spec.n_e:
        rest = np.nonzero(~keep)[0]
        design = select_extremes(
            dataset.y[rest], spec.n_e // 2, spec.n_e - spec.n_e // 2
        )
        keep[rest[design.indices()]] = True
    return _mask_outside(dataset, keep), None


_METHOD_KINDS = {
    "linear": {"full", "random", "ees-only"},
    "eps-only": {"eps-only"},
    "eps-binary": {"eps-only"},
    "eps-full": {"eps-full", "rs-complete", "ees-full", "combined", "full"},
}


def _check_compat(method: str, kind: str):
    if method not in _METHOD_KINDS:
        raise ValueError(f"unknown method {method!r}")
    if kind not in _METHOD_KINDS[method]:
        raise ValueError(f"method {method!r} is incompatible with design {kind!r}")


def _replicate(scenario, design_spec, method, tested, child, need_beta):
    """One replicate: returns (p_value, beta_hat) or raises on failure."""
    rng = np.random.default_rng(child)
    ds = simulate_dataset(scenario, rng=rng)
    ds2, design = apply_design(ds, design_spec, n=design_spec.n or scenario.n, rng=rng)
    spec = model_spec_for(scenario, tested)
    beta = np.nan

    if method == "linear":
        view = build_design(ds2, spec)
        res = linear_score_test(view.y, view.x0, view.x1)
        if need_beta:
            fit = ols_fit(view.y, view.x, list(view.names))
            beta = fit.by_name("g:g")
        return res.p_value, beta

    if method == "eps-only":
        view = build_design(ds2, spec, design=design)
        res = score_test_eps_only(view, design.c_l, design.c_u)
        if need_beta:
            fit = fit_eps_only(view, design.c_l, design.c_u)
            if not fit.converged:
                raise RuntimeError("truncated-likelihood fit did not converge")
            beta = fit.by_name("g:g")
        return res.p_value, beta

    if method == "eps-binary":
        view = build_design(ds2, spec, design=design)
        yb = dichotomize(view, design.c_l, design.c_u)
        return score_test_logistic(yb, view.x1, view.x0).p_value, beta

    # mixture likelihood: closed-form score for genotype main effects,
    # likelihood ratio otherwise
    if all(t.startswith("g:") for t in spec.tested_terms):
        res = score_test_eps_full(ds2, design, spec)
        p_value = res.p_value
    else:
        res = lrt_eps_full(ds2, design, spec.drop_tested(), spec)
        p_value = res.p_value
    if need_beta:
        fit = fit_eps_full(ds2, design, spec, information=False)
        if not fit.converged:
            raise RuntimeError("mixture-likelihood fit did not converge")
        beta = fit.by_name("g:g")
    return p_value, beta


def _replicate_batch(args):
    scenario, design_spec, method, tested, children, need_beta = args
    out = []
    for child in children:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out.append(_replicate(scenario, design_spec, method, tested, child, need_beta))
        except (ValueError, RuntimeError, NonFiniteObjectiveError, np.linalg.LinAlgError):
            out.append((np.nan, np.nan))
    return out


@dataclass(frozen=True)
class SimResult:
    """Monte Carlo summary over R replicates.

    power counts p-values below level among the replicates used; failures
    are replicates whose fit or test errored (excluded from the denominator
    when rare). mc_se is sqrt(power (1-power) / used).
    """

    replicates: int
    used: int
    failures: int
    seed: int
    level: float = 0.05
    power: float = None
    mc_se: float = None
    mse: float = None
    mean_estimate: float = None
    p_values: np.ndarray = field(default=None, repr=False)
    estimates: np.ndarray = field(default=None, repr=False)


def _run(
    scenario,
    design_spec,
    method,
    tested,
    R,
    seed,
    workers,
    need_beta,
    level=0.05,
):
    _check_compat(method, design_spec.kind)
    if R < 1:
        raise ValueError("need at least one replicate")
    children = np.random.SeedSequence(seed).spawn(R)
    if workers and workers > 1:
        batches = [
            (scenario, design_spec, method, tested, children[i::workers], need_beta)
            for i in range(workers)
        ]
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_replicate_batch, batches))
        results = [None] * R
        for i, part in enumerate(parts):
            for j, r in enumerate(part):
                results[i + j * workers] = r
    else:
        results = _replicate_batch(
            (scenario, design_spec, method, tested, children, need_beta)
        )
    p = np.array([r[0] for r in results])
    b = np.array([r[1] for r in results])
    bad = ~np.isfinite(p) if not need_beta else (~np.isfinite(p) | ~np.isfinite(b))
    failures = int(np.sum(bad))
    if failures / R >= 0.01:
        raise RuntimeError(
            f"{failures} of {R} replicates failed, reaching the 1% failure budget"
        )
    used = R - failures
    power = float(np.sum(p[~bad] < level)) / used
    out = dict(
        replicates=R,
        used=used,
        failures=failures,
        seed=seed,
        level=level,
        power=power,
        mc_se=float(np.sqrt(power * (1 - power) / used)),
        p_values=p,
    )
    if need_beta:
        est = b[~bad]
        out["mse"] = float(np.mean((est - scenario.beta_g) ** 2))
        out["mean_estimate"] = float(np.mean(est))
        out["estimates"] = b
    return SimResult(**out)


def estimate_power(
    scenario: SimScenario,
    design_spec: DesignSpec,
    method: str,
    tested=None,
    R: int = 1000,
    level: float = 0.05,
    seed: int = 0,
    workers: int | None = None,
) -> SimResult:
    """Rejection rate of the method's test at the given level."""
    return _run(
        scenario, design_spec, method, tested, R, seed, workers, need_beta=False,
        level=level,
    )


def estimate_mse(
    scenario: SimScenario,
    design_spec: DesignSpec,
    method: str,
    R: int = 1000,
    seed: int = 0,
    workers: int | None = None,
) -> SimResult:
    """Mean squared error of the genotype-effect estimate around its truth."""
    return _run(
        scenario, design_spec, method, ("g:g",), R, seed, workers, need_beta=True
    )


def power_curve(
    scenario: SimScenario,
    designs,
    n_grid,
    R: int = 500,
    seed: int = 0,
    workers: int | None = None,
):
    """Long-format power table over genotyped-count grid x designs.

    designs maps a label to a (DesignSpec, method) pair. Rows are dicts
    with keys n, design, power, mc_se, failures.
    """
    rows = []
    for label, (dspec, method) in designs.items():
        for n in n_grid:
            if not 1 <= n <= scenario.n_total:
                raise ValueError(f"grid point {n} outside [1, {scenario.n_total}]")
            if dspec.kind == "combined":
                d = dspec
            else:
                d = replace(dspec, n=int(n))
            res = estimate_power(
                scenario, d, method, R=R, seed=seed, workers=workers
            )
            rows.append(
                dict(
                    n=int(n),
                    design=label,
                    power=res.power,
                    mc_se=res.mc_se,
                    failures=res.failures,
                )
            )
    return rows
