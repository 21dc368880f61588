"""Tab-separated file ingestion and result serialization.

Phenotype files are row-per-individual (first column an ID, then named
numeric columns); genotype files are row-per-SNP (SNP ID, genomic position,
then one genotype per individual in phenotype ID order). Missing values are
"NA". Validation failures name the file, row and column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

__all__ = [
    "PhenotypeTable",
    "GenotypeTable",
    "read_phenotypes",
    "read_genotypes",
    "make_dataset",
    "write_tsv",
    "format_value",
]

MISSING = "NA"


@dataclass(frozen=True)
class PhenotypeTable:
    """Per-individual numeric columns keyed by name, in file order."""

    path: str
    ids: tuple
    columns: dict

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise ValueError(
                f"{self.path}: no column named {name!r}; "
                f"available: {', '.join(self.columns)}"
            )
        return self.columns[name]


@dataclass(frozen=True)
class GenotypeTable:
    """SNP-major genotype matrix with SNP IDs and genomic positions."""

    path: str
    snp_ids: tuple
    positions: tuple
    genotypes: np.ndarray  # m x N, NaN for missing

    @property
    def n_snps(self) -> int:
        return len(self.snp_ids)


def _read_rows(path: str):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    rows = [line.split("\t") for line in lines if line != ""]
    if not rows:
        raise ValueError(f"{path}: file is empty")
    return rows


def read_phenotypes(path: str) -> PhenotypeTable:
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 2:
        raise ValueError(f"{path}: header must name an ID column and at least one value column")
    names = header[1:]
    seen = set()
    for name in names:
        if name in seen:
            raise ValueError(f"{path}: duplicate column name {name!r}")
        seen.add(name)
    ids = []
    values = [[] for _ in names]
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(
                f"{path}: row {r} has {len(row)} fields, header has {len(header)}"
            )
        ids.append(row[0])
        for c, cell in enumerate(row[1:]):
            if cell == MISSING:
                raise ValueError(
                    f"{path}: row {r}, column {names[c]!r}: missing phenotype or "
                    "covariate values are not supported"
                )
            try:
                values[c].append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: row {r}, column {names[c]!r}: non-numeric value {cell!r}"
                ) from None
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: individual IDs are not unique")
    return PhenotypeTable(
        path=path,
        ids=tuple(ids),
        columns={n: np.asarray(v, dtype=float) for n, v in zip(names, values)},
    )


def read_genotypes(path: str, ids: tuple) -> GenotypeTable:
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 3:
        raise ValueError(
            f"{path}: header must be snp_id, position, then individual IDs"
        )
    file_ids = tuple(header[2:])
    if file_ids != tuple(ids):
        raise ValueError(
            f"{path}: individual ID columns do not match the phenotype file "
            "IDs in order"
        )
    snp_ids, positions = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(
                f"{path}: row {r} has {len(row)} fields, header has {len(header)}"
            )
        snp_ids.append(row[0])
        try:
            positions.append(int(row[1]))
        except ValueError:
            raise ValueError(
                f"{path}: row {r}, column 'position': non-integer value {row[1]!r}"
            ) from None
    cells = np.array([row[2:] for row in rows[1:]])
    if cells.size == 0:
        cells = cells.reshape(0, len(file_ids))
    geno = np.full(cells.shape, np.nan)
    for code in ("0", "1", "2"):
        geno[cells == code] = float(code)
    bad = np.isnan(geno) & (cells != MISSING)
    if np.any(bad):
        r, c = (int(i[0]) for i in np.nonzero(bad))
        raise ValueError(
            f"{path}: row {r + 2}, individual {file_ids[c]!r}: genotype must "
            f"be 0, 1, 2 or NA, got {cells[r, c]!r}"
        )
    if len(set(snp_ids)) != len(snp_ids):
        raise ValueError(f"{path}: SNP IDs are not unique")
    return GenotypeTable(
        path=path,
        snp_ids=tuple(snp_ids),
        positions=tuple(positions),
        genotypes=geno,
    )


def make_dataset(
    pheno: PhenotypeTable,
    geno: GenotypeTable | None,
    trait: str,
    env_columns,
    snp_names=None,
    strata_column: str | None = None,
) -> Dataset:
    """Assemble a Dataset from ingested tables for one model."""
    y = pheno.column(trait)
    xe = (
        np.column_stack([pheno.column(c) for c in env_columns])
        if env_columns
        else np.empty((pheno.n_rows, 0))
    )
    strata = None
    if strata_column is not None:
        raw = pheno.column(strata_column)
        if not np.all(raw == np.round(raw)):
            raise ValueError(
                f"{pheno.path}: strata column {strata_column!r} must be integer-coded"
            )
        strata = raw.astype(int)
    if geno is None:
        xg = np.empty((pheno.n_rows, 0))
        names = ()
    else:
        if snp_names is None:
            names = geno.snp_ids
            xg = geno.genotypes.T
        else:
            names = tuple(snp_names)
            idx = []
            for s in names:
                if s not in geno.snp_ids:
                    raise ValueError(f"{geno.path}: no SNP named {s!r}")
                idx.append(geno.snp_ids.index(s))
            xg = geno.genotypes[idx].T
    return Dataset(
        y=y,
        xe=xe,
        xg=xg,
        strata=strata,
        env_names=tuple(env_columns),
        snp_names=names,
        ids=pheno.ids,
    )


def format_value(v) -> str:
    """Deterministic cell formatting: NA for missing, up to 10 significant
    digits for floats, plain text otherwise."""
    if v is None:
        return MISSING
    if isinstance(v, float):
        if np.isnan(v):
            return MISSING
        return f"{v:.10g}"
    if isinstance(v, (np.floating,)):
        return format_value(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_tsv(path: str, header, rows):
    """Tab-separated, header row, LF line endings, NA for missing cells."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(format_value(v) for v in row) + "\n")
