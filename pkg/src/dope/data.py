"""Sample representation, CSV ingestion and fold assignment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyAfterDrop,
    EmptyStratum,
    MissingColumn,
    NonNumericCell,
    TooFewRows,
)

MISSING_MARKERS = ("", "na")


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """n rows of (treatment id, covariate vector, outcome).

    ``treatments`` holds ids ``0..K-1``; ``labels[k]`` is the display text of
    id ``k``.  Arrays are made read-only on construction.
    """

    treatments: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray
    column_names: tuple
    labels: tuple

    def __post_init__(self):
        t = np.asarray(self.treatments, dtype=np.int64)
        w = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.outcomes, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        n = t.shape[0]
        if n < 1 or w.shape[0] != n or y.shape[0] != n:
            raise DataError(
                f"inconsistent lengths: treatments {n}, covariates {w.shape[0]}, outcomes {y.shape[0]}"
            )
        if w.shape[1] < 1:
            raise DataError("at least one covariate column is required")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in covariates or outcomes")
        labels = tuple(str(lab) for lab in self.labels)
        if t.min() < 0 or t.max() >= len(labels):
            raise DataError("treatment ids must lie in 0..K-1")
        names = tuple(self.column_names)
        if len(names) != w.shape[1]:
            raise DataError("column_names must match the covariate count")
        for arr in (t, w, y):
            arr.setflags(write=False)
        object.__setattr__(self, "treatments", t)
        object.__setattr__(self, "covariates", w)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_arrays(cls, treatments, covariates, outcomes, column_names=None, labels=None):
        """Build a table from raw arrays; integer treatments are used as ids."""
        t = np.asarray(treatments)
        w = np.atleast_2d(np.asarray(covariates, dtype=float))
        if w.shape[0] != t.shape[0] and w.shape[1] == t.shape[0]:
            w = w.T
        if column_names is None:
            column_names = tuple(f"w{j + 1}" for j in range(w.shape[1]))
        if labels is None:
            k = int(t.max()) + 1 if t.size else 1
            labels = tuple(str(j) for j in range(max(k, 2)))
        return cls(t.astype(np.int64), w, np.asarray(outcomes, dtype=float), tuple(column_names), tuple(labels))

    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_arms(self) -> int:
        return len(self.labels)

    def label_id(self, label) -> int:
        """Map a display label (or an integer id) to its id."""
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if 0 <= int(label) < self.n_arms:
                return int(label)
            raise ConfigError(f"treatment id {label} out of range")
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ConfigError(f"unknown treatment label {label!r}") from None

    def take(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        return ObservationTable(
            self.treatments[rows], self.covariates[rows], self.outcomes[rows],
            self.column_names, self.labels,
        )

    def with_covariates(self, covariates, column_names=None) -> "ObservationTable":
        return ObservationTable(
            self.treatments, covariates, self.outcomes,
            self.column_names if column_names is None else column_names, self.labels,
        )

    def equals(self, other: "ObservationTable") -> bool:
        return (
            self.labels == other.labels
            and self.column_names == other.column_names
            and np.array_equal(self.treatments, other.treatments)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.outcomes, other.outcomes)
        )


@dataclass(frozen=True)
class IngestionOptions:
    """How to read a CSV file.

    ``missing_policy`` is ``"mean_impute"`` or ``"drop_then_impute"``; with the
    latter, covariate columns whose missing fraction exceeds
    ``drop_threshold`` are removed before imputing the rest.
    """

    treatment_column: str
    outcome_column: str
    missing_policy: str = "mean_impute"
    drop_threshold: float = 0.5
    label_order: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.missing_policy not in ("mean_impute", "drop_then_impute"):
            raise ConfigError(f"unknown missing policy {self.missing_policy!r}")
        if not 0.0 < self.drop_threshold < 1.0:
            raise ConfigError("drop_threshold must lie in (0, 1)")


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_MARKERS


def _parse_float(cell: str) -> float:
    value = float(cell)
    if not math.isfinite(value):
        raise ValueError(cell)
    return value


def column_mean(values) -> float:
    """Mean of the observed (non-NaN) entries using compensated summation."""
    observed = [v for v in values if not math.isnan(v)]
    if not observed:
        return math.nan
    return math.fsum(observed) / len(observed)


def load_csv(path, opts: IngestionOptions) -> ObservationTable:
    """Read a CSV file into an :class:`ObservationTable`.

    Missing cells (empty or ``NA`` in any case) in covariate columns are
    resolved according to ``opts.missing_policy``.  The treatment and outcome
    columns must be complete.  Covariates keep the file's column order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} has no data rows")
    for name in (opts.treatment_column, opts.outcome_column):
        if name not in header:
            raise MissingColumn(name)
    t_idx = header.index(opts.treatment_column)
    y_idx = header.index(opts.outcome_column)
    cov_idx = [j for j in range(len(header)) if j not in (t_idx, y_idx)]
    if not cov_idx:
        raise DataError("no covariate columns")

    n = len(rows)
    raw_t = []
    y = np.empty(n)
    w = np.empty((n, len(cov_idx)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 1} has {len(row)} fields, expected {len(header)}")
        t_cell = row[t_idx].strip()
        if _is_missing(t_cell):
            raise DataError(f"missing treatment in row {i + 1}")
        raw_t.append(t_cell)
        try:
            y[i] = _parse_float(row[y_idx])
        except ValueError:
            raise NonNumericCell(i + 1, opts.outcome_column, row[y_idx]) from None
        for k, j in enumerate(cov_idx):
            cell = row[j]
            if _is_missing(cell):
                w[i, k] = np.nan
                continue
            try:
                w[i, k] = _parse_float(cell)
            except ValueError:
                raise NonNumericCell(i + 1, header[j], cell) from None

    names = [header[j] for j in cov_idx]
    missing_frac = np.isnan(w).mean(axis=0)
    keep = np.ones(len(names), dtype=bool)
    if opts.missing_policy == "drop_then_impute":
        keep = missing_frac <= opts.drop_threshold
        if not keep.any():
            raise EmptyAfterDrop("every covariate column exceeds the missing-data threshold")
    w = w[:, keep]
    names = [nm for nm, k in zip(names, keep) if k]
    for k in range(w.shape[1]):
        col = w[:, k]
        holes = np.isnan(col)
        if holes.all():
            raise DataError(f"covariate {names[k]!r} has no observed values")
        if holes.any():
            col[holes] = column_mean(col)

    labels = _label_order(raw_t, opts.label_order)
    lookup = {lab: i for i, lab in enumerate(labels)}
    t = np.array([lookup[v] for v in raw_t], dtype=np.int64)
    return ObservationTable(t, w, y, tuple(names), tuple(labels))


def _label_order(raw, override):
    seen = list(dict.fromkeys(raw))
    if override is None:
        return seen
    override = [str(v) for v in override]
    unknown = set(seen) - set(override)
    if unknown:
        raise ConfigError(f"labels {sorted(unknown)} missing from the explicit label order")
    return override


def write_csv(table: ObservationTable, path, treatment_column="T", outcome_column="Y") -> None:
    """Write a table so that :func:`load_csv` reads it back unchanged.

    Floats use ``repr`` which round-trips exactly.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([treatment_column, *table.column_names, outcome_column])
        for i in range(table.n):
            writer.writerow(
                [table.labels[table.treatments[i]]]
                + [repr(float(v)) for v in table.covariates[i]]
                + [repr(float(table.outcomes[i]))]
            )


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    K: int

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)


def assign_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Balanced random partition of ``range(n)`` into ``K`` folds.

    Rows are shuffled and then dealt round-robin, so fold sizes differ by at
    most one.  Deterministic given ``(n, K, seed)``.
    """
    if K < 2:
        raise ConfigError("need at least two folds")
    if n < K:
        raise TooFewRows(f"{n} rows cannot fill {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % K
    return FoldAssignment(fold_of, K)


def strata(table: ObservationTable, t) -> ObservationTable:
    """Rows with treatment ``t`` (label or id), in their original order."""
    tid = table.label_id(t)
    rows = np.flatnonzero(table.treatments == tid)
    if rows.size == 0:
        raise EmptyStratum(table.labels[tid])
    return table.take(rows)


def standardize(table: ObservationTable) -> ObservationTable:
    """Centre and scale each covariate column; constant columns are only centred."""
    w = table.covariates
    mu = w.mean(axis=0)
    sd = w.std(axis=0)
    sd[sd == 0.0] = 1.0
    return table.with_covariates((w - mu) / sd)


@dataclass(frozen=True)
class ContrastSpec:
    """Coefficients ``c_t`` of the contrast ``sum_t c_t mu_t``, keyed by arm id."""

    coefficients: dict

    def __post_init__(self):
        coef = {int(k): float(v) for k, v in dict(self.coefficients).items()}
        if not coef or all(v == 0.0 for v in coef.values()):
            raise ConfigError("a contrast needs at least one nonzero coefficient")
        if any(k < 0 for k in coef):
            raise ConfigError("arm ids must be non-negative")
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def difference(cls, treated: int = 1, control: int = 0) -> "ContrastSpec":
        return cls({treated: 1.0, control: -1.0})

    @classmethod
    def single(cls, arm: int) -> "ContrastSpec":
        return cls({arm: 1.0})

    def validate(self, n_arms: int) -> None:
        bad = [k for k in self.coefficients if k >= n_arms]
        if bad:
            raise ConfigError(f"contrast refers to unknown arms {bad}")

    def as_vector(self, n_arms: int) -> np.ndarray:
        self.validate(n_arms)
        c = np.zeros(n_arms)
        for k, v in self.coefficients.items():
            c[k] = v
        return c
