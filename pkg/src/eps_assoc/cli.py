"""Command-line front end: fitting, testing, GWAS batches and simulations.

Subcommands: fit, test, gwas, simulate, power. Inputs and outputs are
tab-separated files; reruns with identical arguments and seed produce
byte-identical output regardless of worker count. Exit codes: 0 success,
1 invalid input, 2 computational failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import math
import os
import sys
import warnings

import numpy as np

from .data import (
    ModelSpec,
    build_design,
    select_extremes,
    select_extremes_by_cutoffs,
)
from .epsbinary import dichotomize, fit_logistic, score_test_logistic
from .epsfull import (
    _scan_null,
    _scan_score,
    fit_eps_full,
    lrt_eps_full,
    score_test_eps_full,
)
from .epsonly import fit_eps_only, score_test_eps_only
from .io import make_dataset, read_genotypes, read_phenotypes, write_tsv
from .linear import linear_score_test, ols_fit
from .sim import (
    DesignSpec,
    SimScenario,
    estimate_mse,
    estimate_power,
    power_curve,
)
from .statskernel import NonFiniteObjectiveError
from .data import wald_intervals

METHODS = ("full", "random", "eps-only", "eps-only-binary", "eps-full")
WORKERS_ENV = "EPS_ASSOC_WORKERS"


class CliError(ValueError):
    """Invalid input or configuration (exit code 1)."""


def parse_formula(formula: str):
    """\"y ~ e:sex,age + g:SNP1 + eg:sex*SNP1\" -> (trait, env, snp, inter)."""
    if "~" not in formula:
        raise CliError(f"formula {formula!r} lacks '~'")
    lhs, rhs = formula.split("~", 1)
    trait = lhs.strip()
    if not trait:
        raise CliError("formula names no response column")
    env, snp, inter = [], [], []
    for raw in rhs.split("+"):
        term = raw.strip()
        if not term:
            raise CliError(f"formula {formula!r} has an empty term")
        if term.startswith("e:"):
            env.extend(c.strip() for c in term[2:].split(","))
        elif term.startswith("g:"):
            snp.extend(c.strip() for c in term[2:].split(","))
        elif term.startswith("eg:"):
            for pair in term[3:].split(","):
                if "*" not in pair:
                    raise CliError(f"interaction term {pair!r} must be env*snp")
                e, g = (p.strip() for p in pair.split("*", 1))
                inter.append((e, g))
        else:
            raise CliError(
                f"term {term!r} must start with 'e:', 'g:' or 'eg:'"
            )
    return trait, tuple(env), tuple(snp), tuple(inter)


def _model_spec(args, tested_default=None):
    trait, env, snp, inter = parse_formula(args.formula)
    tested = tuple(
        t.strip() for t in args.test_terms.split(",")
    ) if getattr(args, "test_terms", None) else None
    if tested is None:
        tested = tested_default if tested_default is not None else tuple(
            f"g:{s}" for s in snp
        )
    try:
        return trait, ModelSpec(env, snp, inter, tested)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load(args, snp_names=None, need_geno=True):
    pheno = read_phenotypes(args.pheno)
    geno = None
    if need_geno:
        if not args.geno:
            raise CliError("this command needs --geno")
        geno = read_genotypes(args.geno, pheno.ids)
    return pheno, geno


def _design_for(args, y):
    has_counts = args.lower_count is not None or args.upper_count is not None
    has_cuts = args.c_lower is not None or args.c_upper is not None
    if has_counts and has_cuts:
        raise CliError("give either extreme counts or cutoffs, not both")
    if has_counts:
        lo = args.lower_count or 0
        hi = args.upper_count or 0
        return select_extremes(y, lo, hi)
    if has_cuts:
        if args.c_lower is None or args.c_upper is None:
            raise CliError("cutoff designs need both --c-lower and --c-upper")
        return select_extremes_by_cutoffs(y, args.c_lower, args.c_upper)
    return None


def _impute_view(view):
    """Mean-impute missing genotype cells of a view's columns, in place of
    dropping rows."""
    x = view.x.copy()
    for j in range(x.shape[1]):
        bad = np.isnan(x[:, j])
        if np.any(bad):
            x[bad, j] = np.mean(x[~bad, j])
    return type(view)(
        y=view.y, x=x, names=view.names, tested_idx=view.tested_idx, rows=view.rows
    )


def _complete_rows(dataset, spec, rows):
    keep = np.ones(rows.size, dtype=bool)
    for s in spec.snp_columns:
        keep &= ~np.isnan(dataset.xg[rows, dataset.snp_index(s)])
    return rows[keep]


def _workers(args, parallel_default=False):
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return (os.cpu_count() or 1) if parallel_default else 1


def _check_impute(args):
    if args.impute_mean and args.method == "eps-full":
        raise CliError(
            "--impute-mean conflicts with eps-full; missing genotypes are part "
            "of its likelihood"
        )


# ---------------------------------------------------------------------------
# fit / test


def cmd_fit(args) -> int:
    _check_impute(args)
    trait, spec = _model_spec(args, tested_default=())
    pheno, geno = _load(args)
    dataset = make_dataset(
        pheno, geno, trait, spec.env_columns, spec.snp_columns, args.strata
    )
    design = _design_for(args, dataset.y)
    method = args.method

    if method in ("full", "random"):
        rows = np.arange(dataset.n_rows)
        if not args.impute_mean:
            rows = _complete_rows(dataset, spec, rows)
        view = build_design(dataset, spec, rows=rows, require_complete=not args.impute_mean)
        if args.impute_mean:
            view = _impute_view(view)
        fit = ols_fit(view.y, view.x, list(view.names))
    elif method == "eps-only":
        if design is None:
            raise CliError("eps-only needs extreme counts or cutoffs")
        rows = design.indices()
        if not args.impute_mean:
            kept = _complete_rows(dataset, spec, rows)
            if kept.size < rows.size:
                print(
                    f"dropped {rows.size - kept.size} extreme rows with missing "
                    "genotypes",
                    file=sys.stderr,
                )
            rows = kept
        view = build_design(dataset, spec, rows=rows, require_complete=not args.impute_mean)
        if args.impute_mean:
            view = _impute_view(view)
        fit = fit_eps_only(view, design.c_l, design.c_u)
    elif method == "eps-only-binary":
        if design is None:
            raise CliError("eps-only-binary needs extreme counts or cutoffs")
        rows = _complete_rows(dataset, spec, design.indices())
        view = build_design(dataset, spec, rows=rows)
        yb = dichotomize(view, design.c_l, design.c_u)
        lf = fit_logistic(yb, view.x, list(view.names))
        est = np.concatenate([[lf.intercept], lf.coef])
        se, ci, _ = wald_intervals(est, lf.observed_information)
        rows_out = [
            (n, e, s, lo, hi)
            for n, e, s, (lo, hi) in zip(
                ["intercept"] + list(view.names), est, se, ci
            )
        ]
        rows_out.append(("loglik", lf.loglik, None, None, None))
        rows_out.append(("converged", bool(lf.converged), None, None, None))
        write_tsv(args.out, ("name", "estimate", "se", "ci_low", "ci_high"), rows_out)
        return 0
    elif method == "eps-full":
        fit = fit_eps_full(dataset, design, spec, hwe=args.hwe)
    else:
        raise CliError(f"unknown method {method!r}")

    rows_out = [
        (n, e, s, lo, hi)
        for n, e, s, (lo, hi) in zip(fit.names, fit.estimates, fit.se, fit.ci)
    ]
    rows_out.append(("loglik", fit.loglik, None, None, None))
    rows_out.append(("converged", bool(fit.converged), None, None, None))
    write_tsv(args.out, ("name", "estimate", "se", "ci_low", "ci_high"), rows_out)
    return 0


def cmd_test(args) -> int:
    _check_impute(args)
    trait, spec = _model_spec(args)
    if not spec.tested_terms:
        raise CliError("no tested terms; give --test-terms or g: terms")
    pheno, geno = _load(args)
    dataset = make_dataset(
        pheno, geno, trait, spec.env_columns, spec.snp_columns, args.strata
    )
    design = _design_for(args, dataset.y)
    method = args.method

    if method in ("full", "random"):
        rows = np.arange(dataset.n_rows)
        if not args.impute_mean:
            rows = _complete_rows(dataset, spec, rows)
        view = build_design(dataset, spec, rows=rows, require_complete=not args.impute_mean)
        if args.impute_mean:
            view = _impute_view(view)
        res = linear_score_test(view.y, view.x0, view.x1)
        n_used = view.n_rows
    elif method == "eps-only":
        if design is None:
            raise CliError("eps-only needs extreme counts or cutoffs")
        rows = _complete_rows(dataset, spec, design.indices())
        view = build_design(dataset, spec, rows=rows)
        res = score_test_eps_only(view, design.c_l, design.c_u)
        n_used = view.n_rows
    elif method == "eps-only-binary":
        if design is None:
            raise CliError("eps-only-binary needs extreme counts or cutoffs")
        rows = _complete_rows(dataset, spec, design.indices())
        view = build_design(dataset, spec, rows=rows)
        yb = dichotomize(view, design.c_l, design.c_u)
        res = score_test_logistic(yb, view.x1, view.x0)
        n_used = view.n_rows
    elif method == "eps-full":
        if all(t.startswith("g:") for t in spec.tested_terms):
            res = score_test_eps_full(dataset, design, spec, hwe=args.hwe)
        else:
            res = lrt_eps_full(dataset, design, spec.drop_tested(), spec, hwe=args.hwe)
        n_used = dataset.n_rows
    else:
        raise CliError(f"unknown method {method!r}")

    write_tsv(
        args.out,
        ("statistic", "df", "p_value", "method", "n_used"),
        [(res.statistic, res.df, res.p_value, res.method, n_used)],
    )
    return 0


# ---------------------------------------------------------------------------
# gwas

_GWAS = {}


def _gwas_init(payload):
    _GWAS.update(payload)


def _gwas_one(i):
    from .data import Dataset

    g = _GWAS
    geno_row = g["genotypes"][i]
    method = g["method"]
    try:
        if method == "eps-full":
            res = _scan_score(geno_row, g["scan_null"], hwe=g["hwe"])
            return (res.statistic, res.df, res.p_value, g["y"].size, "ok")
        dataset = Dataset(
            y=g["y"],
            xe=g["xe"],
            xg=geno_row.reshape(-1, 1),
            strata=g["strata"],
            env_names=g["env_names"],
            snp_names=("snp",),
        )
        spec = ModelSpec(g["env_names"], ("snp",), (), ("g:snp",))
        if method in ("full", "random"):
            rows = np.arange(dataset.n_rows)
            if not g["impute_mean"]:
                rows = rows[~np.isnan(geno_row)]
            view = build_design(
                dataset, spec, rows=rows, require_complete=not g["impute_mean"]
            )
            if g["impute_mean"]:
                view = _impute_view(view)
            res = linear_score_test(view.y, view.x0, view.x1)
            n_used = view.n_rows
        elif method == "eps-only":
            rows = np.asarray(g["extreme_rows"])
            rows = rows[~np.isnan(geno_row[rows])]
            view = build_design(dataset, spec, rows=rows)
            res = score_test_eps_only(view, g["c_l"], g["c_u"])
            n_used = view.n_rows
        elif method == "eps-only-binary":
            rows = np.asarray(g["extreme_rows"])
            rows = rows[~np.isnan(geno_row[rows])]
            view = build_design(dataset, spec, rows=rows)
            yb = dichotomize(view, g["c_l"], g["c_u"])
            res = score_test_logistic(yb, view.x1, view.x0)
            n_used = view.n_rows
        else:
            raise CliError(f"unknown gwas method {method!r}")
        return (res.statistic, res.df, res.p_value, n_used, "ok")
    except (ValueError, RuntimeError, NonFiniteObjectiveError, np.linalg.LinAlgError) as exc:
        msg = " ".join(str(exc).split())
        return (None, None, None, None, f"failed: {msg}")


def cmd_gwas(args) -> int:
    _check_impute(args)
    trait, env, snp, inter = parse_formula(args.formula)
    if snp or inter:
        raise CliError(
            "gwas formulas declare only the response and e: covariates; each "
            "SNP is tested in turn"
        )
    pheno, geno = _load(args)
    dataset_cols = make_dataset(pheno, None, trait, env, strata_column=args.strata)
    method = args.method
    design = _design_for(args, dataset_cols.y)
    if method in ("eps-only", "eps-only-binary") and design is None:
        raise CliError(f"{method} needs extreme counts or cutoffs")

    payload = dict(
        y=np.asarray(dataset_cols.y),
        xe=np.asarray(dataset_cols.xe),
        strata=np.asarray(dataset_cols.strata),
        env_names=tuple(env),
        genotypes=np.asarray(geno.genotypes),
        method=method,
        impute_mean=bool(args.impute_mean),
        hwe=bool(args.hwe),
        extreme_rows=design.indices() if design is not None else None,
        c_l=design.c_l if design is not None else None,
        c_u=design.c_u if design is not None else None,
        scan_null=(
            _scan_null(
                np.asarray(dataset_cols.y),
                np.asarray(dataset_cols.xe),
                np.asarray(dataset_cols.strata),
            )
            if method == "eps-full"
            else None
        ),
    )
    m = geno.n_snps
    workers = _workers(args, parallel_default=True)
    if workers > 1 and m > 1:
        chunks = np.array_split(np.arange(m), min(workers * 4, m))
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_gwas_init, initargs=(payload,)
        ) as pool:
            parts = pool.map(_gwas_chunk, [c.tolist() for c in chunks])
            results = [r for part in parts for r in part]
    else:
        _gwas_init(payload)
        results = [_gwas_one(i) for i in range(m)]

    method_label = method
    rows_out = []
    for i, (stat, df, p, n_used, status) in enumerate(results):
        neg = -math.log10(p) if p is not None and p > 0 else (
            math.inf if p == 0.0 else None
        )
        rows_out.append(
            (
                geno.snp_ids[i],
                geno.positions[i],
                None,  # beta_hat: score tests do not estimate it
                None,
                stat,
                df,
                p,
                neg,
                n_used,
                method_label,
                status,
            )
        )
    write_tsv(
        args.out,
        (
            "snp_id",
            "position",
            "beta_hat",
            "se",
            "statistic",
            "df",
            "p_value",
            "neg_log10_p",
            "n_used",
            "method",
            "status",
        ),
        rows_out,
    )
    return 0


def _gwas_chunk(indices):
    return [_gwas_one(i) for i in indices]


# ---------------------------------------------------------------------------
# simulate / power

_SIM_METHOD = {
    "full": "linear",
    "random": "linear",
    "eps-only": "eps-only",
    "eps-only-binary": "eps-binary",
    "eps-full": "eps-full",
}
_DEFAULT_DESIGN = {
    "full": "full",
    "random": "random",
    "eps-only": "eps-only",
    "eps-only-binary": "eps-only",
    "eps-full": "eps-full",
}


def _scenario(args) -> SimScenario:
    try:
        return SimScenario(
            model=args.model,
            n_total=args.n_total,
            n=args.n,
            alpha=args.alpha,
            beta_e1=args.beta_e1,
            beta_e2=args.beta_e2,
            beta_g=args.beta_g,
            beta_e1g=args.beta_e1g,
            beta_e2g=args.beta_e2g,
            sigma=args.sigma,
            q=args.q,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _sim_design(args) -> DesignSpec:
    kind = args.design or _DEFAULT_DESIGN[args.method]
    try:
        return DesignSpec(
            kind=kind, n=args.n, n0=args.n0, n_e=args.n_e, exposure=args.exposure
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    dspec = _sim_design(args)
    method = _SIM_METHOD[args.method]
    tested = (
        tuple(t.strip() for t in args.test_terms.split(","))
        if args.test_terms
        else None
    )
    workers = _workers(args)
    if args.mse:
        if method == "eps-binary":
            raise CliError("eps-only-binary estimates no genotype coefficient")
        res = estimate_mse(
            scenario, dspec, method, R=args.replicates, seed=args.seed, workers=workers
        )
    else:
        res = estimate_power(
            scenario,
            dspec,
            method,
            tested=tested,
            R=args.replicates,
            seed=args.seed,
            workers=workers,
        )
    write_tsv(
        args.out,
        (
            "model",
            "design",
            "method",
            "replicates",
            "used",
            "failures",
            "power",
            "mc_se",
            "mse",
            "mean_estimate",
            "level",
            "seed",
        ),
        [
            (
                scenario.model,
                dspec.kind,
                args.method,
                res.replicates,
                res.used,
                res.failures,
                res.power,
                res.mc_se,
                res.mse,
                res.mean_estimate,
                res.level,
                res.seed,
            )
        ],
    )
    return 0


def cmd_power(args) -> int:
    scenario = _scenario(args)
    dspec = _sim_design(args)
    method = _SIM_METHOD[args.method]
    try:
        grid = [int(v) for v in args.n_grid.split(",")]
    except ValueError:
        raise CliError(f"--n-grid must be comma-separated integers, got {args.n_grid!r}") from None
    rows = power_curve(
        scenario,
        {args.method: (dspec, method)},
        grid,
        R=args.replicates,
        seed=args.seed,
        workers=_workers(args),
    )
    write_tsv(
        args.out,
        ("n", "design", "power", "mc_se", "failures"),
        [(r["n"], r["design"], r["power"], r["mc_se"], r["failures"]) for r in rows],
    )
    return 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _add_io_flags(p, need_geno=True):
    p.add_argument("--pheno", required=True, help="phenotype/covariate TSV")
    p.add_argument("--geno", required=need_geno, help="SNP-major genotype TSV")
    p.add_argument("--formula", required=True, help='e.g. "y ~ e:sex,age + g:SNP1"')
    p.add_argument("--test-terms", help="comma-separated tested terms")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--lower-count", type=int)
    p.add_argument("--upper-count", type=int)
    p.add_argument("--c-lower", type=float)
    p.add_argument("--c-upper", type=float)
    p.add_argument("--strata", help="stratum column in the phenotype file")
    p.add_argument("--hwe", action="store_true", help="Hardy-Weinberg genotype probabilities")
    p.add_argument("--impute-mean", action="store_true")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_sim_flags(p):
    p.add_argument(
        "--model",
        default="main-effects",
        choices=("main-effects", "binary-interaction", "continuous-interaction"),
    )
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--design", choices=DesignSpec.KINDS)
    p.add_argument("--n-total", type=int, default=5000)
    p.add_argument("--n", type=int, default=2500)
    p.add_argument("--n0", type=int)
    p.add_argument("--n-e", type=int)
    p.add_argument("--exposure", default="e2")
    p.add_argument("--alpha", type=float, default=50.0)
    p.add_argument("--beta-e1", type=float, default=10.0)
    p.add_argument("--beta-e2", type=float, default=5.0)
    p.add_argument("--beta-g", type=float, default=0.5)
    p.add_argument("--beta-e1g", type=float, default=1.0)
    p.add_argument("--beta-e2g", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=6.0)
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--replicates", "-R", type=int, default=1000)
    p.add_argument("--test-terms")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eps-assoc", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", help="fit one model, write a parameter table")
    _add_io_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="test declared terms in one model")
    _add_io_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("gwas", help="test every SNP in the genotype file")
    _add_io_flags(p)
    p.set_defaults(func=cmd_gwas)

    p = sub.add_parser("simulate", help="Monte Carlo power/MSE for one design")
    _add_sim_flags(p)
    p.add_argument("--mse", action="store_true", help="also estimate MSE (fits each replicate)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="power across a grid of genotyped counts")
    _add_sim_flags(p)
    p.add_argument("--n-grid", required=True, help="comma-separated genotyped counts")
    p.set_defaults(func=cmd_power)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, NonFiniteObjectiveError, np.linalg.LinAlgError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
