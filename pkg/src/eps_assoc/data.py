"""Domain data model: datasets, extreme-sampling designs and model terms.

Datasets and designs are immutable after construction and can be shared
across threads. Genotype missingness is represented by NaN in the genotype
matrix and is treated as a first-class state, never silently imputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .statskernel import chi2_sf, norm_quantile

__all__ = [
    "Dataset",
    "ExtremeDesign",
    "ModelSpec",
    "ParameterVector",
    "FitResult",
    "TestResult",
    "RegressionView",
    "select_extremes",
    "select_extremes_by_cutoffs",
    "build_design",
]


@dataclass(frozen=True)
class Dataset:
    """Phenotype, environmental covariates and genotypes for N individuals.

    y: length-N trait vector.
    xe: N x d environmental covariate matrix.
    xg: N x m genotype matrix, entries in {0,1,2} or NaN for missing.
    strata: length-N integer labels of the discrete confounder (one stratum
        by default).
    """

    y: np.ndarray
    xe: np.ndarray
    xg: np.ndarray
    strata: np.ndarray = None
    env_names: tuple = ()
    snp_names: tuple = ()
    ids: tuple = ()

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        xe = np.asarray(self.xe, dtype=float)
        xg = np.asarray(self.xg, dtype=float)
        if xe.ndim == 1:
            xe = xe.reshape(-1, 1)
        if xg.ndim == 1:
            xg = xg.reshape(-1, 1)
        n = y.size
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        if xe.shape[0] != n or xg.shape[0] != n:
            raise ValueError("covariate row counts do not match the phenotype")
        if not np.all(np.isfinite(y)):
            raise ValueError("phenotype contains non-finite values")
        if not np.all(np.isfinite(xe)):
            raise ValueError("environmental covariates contain non-finite values")
        obs = xg[~np.isnan(xg)]
        if obs.size and not np.all(np.isin(obs, (0.0, 1.0, 2.0))):
            raise ValueError("observed genotypes must be 0, 1 or 2")
        strata = self.strata
        if strata is None:
            strata = np.zeros(n, dtype=int)
        else:
            strata = np.asarray(strata, dtype=int)
            if strata.size != n:
                raise ValueError("strata labels do not match the phenotype length")
        env_names = tuple(self.env_names) or tuple(
            f"e{j + 1}" for j in range(xe.shape[1])
        )
        snp_names = tuple(self.snp_names) or tuple(
            f"g{j + 1}" for j in range(xg.shape[1])
        )
        if len(env_names) != xe.shape[1] or len(snp_names) != xg.shape[1]:
            raise ValueError("column names do not match column counts")
        for k, v in (
            ("y", y), ("xe", xe), ("xg", xg), ("strata", strata),
            ("env_names", env_names), ("snp_names", snp_names),
        ):
            object.__setattr__(self, k, v)
        for a in (y, xe, xg, strata):
            a.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.y.size

    def env_index(self, name: str) -> int:
        try:
            return self.env_names.index(name)
        except ValueError:
            raise KeyError(f"unknown environmental column {name!r}") from None

    def snp_index(self, name: str) -> int:
        try:
            return self.snp_names.index(name)
        except ValueError:
            raise KeyError(f"unknown genotype column {name!r}") from None


@dataclass(frozen=True)
class ExtremeDesign:
    """Cutoffs and the index set of extreme-phenotype rows."""

    c_l: float
    c_u: float
    extreme_index_set: frozenset

    def __post_init__(self):
        if not self.c_l < self.c_u:
            raise ValueError(f"need c_l < c_u, got ({self.c_l}, {self.c_u})")
        object.__setattr__(
            self, "extreme_index_set", frozenset(int(i) for i in self.extreme_index_set)
        )

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[sorted(self.extreme_index_set)] = True
        return m

    def indices(self) -> np.ndarray:
        return np.array(sorted(self.extreme_index_set), dtype=int)


def select_extremes(y, lower_count: int, upper_count: int) -> ExtremeDesign:
    """Pick the given number of lowest and highest rows as extremes.

    Cutoffs are placed at the midpoint between the last included and first
    excluded order statistic so that membership is reproducible from the
    cutoffs alone. Boundary ties are broken by ascending row index.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if lower_count < 0 or upper_count < 0:
        raise ValueError("extreme counts must be nonnegative")
    if lower_count + upper_count > n:
        raise ValueError(
            f"requested {lower_count + upper_count} extremes from {n} rows"
        )
    order = np.argsort(y, kind="stable")
    low = order[:lower_count]
    high = order[n - upper_count:]
    ys = y[order]
    c_l = _midpoint(ys, lower_count, low=True)
    c_u = _midpoint(ys, upper_count, low=False)
    if not c_l < c_u:
        raise ValueError("extreme counts overlap: lower cutoff meets upper cutoff")
    return ExtremeDesign(c_l, c_u, frozenset(map(int, np.concatenate([low, high]))))


def _midpoint(ys: np.ndarray, count: int, low: bool) -> float:
    n = ys.size
    if count == 0:
        return float(ys[0] - 1.0) if low else float(ys[-1] + 1.0)
    if low:
        if count == n:
            return float(ys[-1] + 1.0)
        return float(0.5 * (ys[count - 1] + ys[count]))
    if count == n:
        return float(ys[0] - 1.0)
    return float(0.5 * (ys[n - count - 1] + ys[n - count]))


def select_extremes_by_cutoffs(y, c_l: float, c_u: float) -> ExtremeDesign:
    """All rows with y below c_l or above c_u. The set may be empty."""
    if not c_l < c_u:
        raise ValueError(f"need c_l < c_u, got ({c_l}, {c_u})")
    y = np.asarray(y, dtype=float)
    idx = np.nonzero((y < c_l) | (y > c_u))[0]
    return ExtremeDesign(float(c_l), float(c_u), frozenset(map(int, idx)))


@dataclass(frozen=True)
class ModelSpec:
    """Mean-model terms and the tested (null-hypothesis) block.

    Terms are named "e:<col>" for environmental columns, "g:<col>" for
    genotype columns and "eg:<ecol>*<gcol>" for interactions. tested_terms
    selects the coefficients under test; everything else is nuisance.
    """

    env_columns: tuple = ()
    snp_columns: tuple = ()
    interaction_pairs: tuple = ()
    tested_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "env_columns", tuple(self.env_columns))
        object.__setattr__(self, "snp_columns", tuple(self.snp_columns))
        object.__setattr__(
            self, "interaction_pairs", tuple(tuple(p) for p in self.interaction_pairs)
        )
        object.__setattr__(self, "tested_terms", tuple(self.tested_terms))
        for e, g in self.interaction_pairs:
            if e not in self.env_columns or g not in self.snp_columns:
                raise ValueError(
                    f"interaction ({e},{g}) references an undeclared column"
                )
        known = set(self.term_names())
        for t in self.tested_terms:
            if t not in known:
                raise ValueError(f"tested term {t!r} is not a model term")

    def term_names(self) -> list:
        names = [f"e:{c}" for c in self.env_columns]
        names += [f"g:{c}" for c in self.snp_columns]
        names += [f"eg:{e}*{g}" for e, g in self.interaction_pairs]
        return names

    def with_tested(self, tested: Sequence[str]) -> "ModelSpec":
        return ModelSpec(
            self.env_columns, self.snp_columns, self.interaction_pairs, tuple(tested)
        )

    def drop_tested(self) -> "ModelSpec":
        """Null model: tested terms removed from the mean model."""
        tested = set(self.tested_terms)
        env = tuple(c for c in self.env_columns if f"e:{c}" not in tested)
        snp = tuple(c for c in self.snp_columns if f"g:{c}" not in tested)
        inter = tuple(
            (e, g) for e, g in self.interaction_pairs if f"eg:{e}*{g}" not in tested
        )
        return ModelSpec(env, snp, inter, ())


@dataclass(frozen=True)
class ParameterVector:
    """Coefficients of the linear mean model plus the residual sd."""

    alpha: float
    beta_e: np.ndarray
    beta_g: np.ndarray
    beta_eg: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        for k in ("beta_e", "beta_g", "beta_eg"):
            object.__setattr__(self, k, np.atleast_1d(np.asarray(getattr(self, k), dtype=float)))

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [[self.alpha], self.beta_e, self.beta_g, self.beta_eg, [self.sigma]]
        )


DEFAULT_CI_LEVEL = 0.95


@dataclass
class FitResult:
    """Maximum-likelihood estimates with Wald confidence intervals."""

    names: list
    estimates: np.ndarray
    observed_information: np.ndarray
    loglik: float
    converged: bool
    ci_level: float = DEFAULT_CI_LEVEL
    se: np.ndarray = field(default=None)
    ci: np.ndarray = field(default=None)
    message: str = ""

    def __post_init__(self):
        if self.se is None:
            if self.observed_information is None:
                nan = np.full(np.size(self.estimates), np.nan)
                self.se, self.ci = nan, np.column_stack([nan, nan])
                self.message = (
                    self.message + " observed information not computed"
                ).strip()
            else:
                self.se, self.ci, note = wald_intervals(
                    self.estimates, self.observed_information, self.ci_level
                )
                if note:
                    self.message = (self.message + " " + note).strip()

    def by_name(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def se_by_name(self, name: str) -> float:
        return float(self.se[self.names.index(name)])


def wald_intervals(estimates, information, level=DEFAULT_CI_LEVEL):
    """Per-parameter Wald intervals from the inverse observed information.

    Returns (se, ci, note); on a singular information matrix every se and
    interval is NaN and the note says so.
    """
    estimates = np.asarray(estimates, dtype=float)
    p = estimates.size
    z = norm_quantile(0.5 + level / 2.0)
    try:
        cov = np.linalg.inv(information)
        var = np.diag(cov)
        if np.any(var <= 0):
            raise np.linalg.LinAlgError("non-positive variance")
        se = np.sqrt(var)
    except np.linalg.LinAlgError:
        nan = np.full(p, np.nan)
        return nan, np.column_stack([nan, nan]), (
            "observed information is singular; confidence intervals undefined"
        )
    ci = np.column_stack([estimates - z * se, estimates + z * se])
    return se, ci, ""


@dataclass(frozen=True)
class TestResult:
    """A single hypothesis-test outcome."""

    statistic: float
    df: int
    p_value: float
    method: str

    @classmethod
    def from_chi2(cls, statistic: float, df: int, method: str) -> "TestResult":
        return cls(float(statistic), int(df), float(chi2_sf(statistic, df)), method)


@dataclass(frozen=True)
class RegressionView:
    """Materialized regression columns over a row subset.

    x holds every non-intercept term column in canonical model order
    (environmental, genotype, then interactions); tested_idx marks the
    columns under test. rows maps view rows back to dataset rows.
    """

    y: np.ndarray
    x: np.ndarray
    names: tuple
    tested_idx: tuple
    rows: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.y.size

    @property
    def x0(self) -> np.ndarray:
        return self.x[:, list(self.tested_idx)]

    @property
    def x1(self) -> np.ndarray:
        return self.x[:, self._nuisance_idx()]

    @property
    def x0_names(self) -> tuple:
        return tuple(self.names[i] for i in self.tested_idx)

    @property
    def x1_names(self) -> tuple:
        return tuple(self.names[i] for i in self._nuisance_idx())

    def _nuisance_idx(self) -> list:
        tested = set(self.tested_idx)
        return [i for i in range(len(self.names)) if i not in tested]

    def null_view(self) -> "RegressionView":
        """The same rows with the tested columns dropped."""
        keep = self._nuisance_idx()
        return RegressionView(
            y=self.y,
            x=self.x[:, keep],
            names=tuple(self.names[i] for i in keep),
            tested_idx=(),
            rows=self.rows,
        )


def build_design(
    dataset: Dataset,
    model_spec: ModelSpec,
    design: ExtremeDesign | None = None,
    rows=None,
    require_complete: bool = True,
) -> RegressionView:
    """Materialize the regression columns for a model over selected rows.

    Rows default to the design's extreme set when a design is given, all rows
    otherwise. Interaction columns are the elementwise product of their
    parents. With require_complete, any referenced genotype column with a
    missing value in the selected rows is an error.
    """
    if rows is None:
        rows = design.indices() if design is not None else np.arange(dataset.n_rows)
    rows = np.asarray(rows, dtype=int)

    columns = {}
    for c in model_spec.env_columns:
        columns[f"e:{c}"] = dataset.xe[rows, dataset.env_index(c)]
    for c in model_spec.snp_columns:
        col = dataset.xg[rows, dataset.snp_index(c)]
        if require_complete and np.any(np.isnan(col)):
            raise ValueError(
                f"genotype column {c!r} has missing values in the selected rows"
            )
        columns[f"g:{c}"] = col
    for e, g in model_spec.interaction_pairs:
        columns[f"eg:{e}*{g}"] = columns[f"e:{e}"] * columns[f"g:{g}"]

    names = model_spec.term_names()
    x = (
        np.column_stack([columns[t] for t in names])
        if names
        else np.empty((rows.size, 0))
    )
    tested_idx = tuple(names.index(t) for t in model_spec.tested_terms)
    return RegressionView(
        y=dataset.y[rows],
        x=x,
        names=tuple(names),
        tested_idx=tested_idx,
        rows=rows,
    )
