"""Trial data containers, CSV ingestion and treatment encoding.

Missing cells are carried as boolean masks next to the values.  The stored
value of an unobserved cell is never read downstream; it is kept as NaN so
that accidental use shows up loudly.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "NA"})


class DataError(ValueError):
    """Raised for malformed or inconsistent trial data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    treatment: np.ndarray
    outcome: np.ndarray
    outcome_observed: np.ndarray
    covariates: np.ndarray
    covariates_observed: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        treatment = np.asarray(self.treatment).astype(str)
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        y_obs = np.asarray(self.outcome_observed, dtype=bool).reshape(-1)
        n = treatment.shape[0]
        X = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        X_obs = np.asarray(self.covariates_observed, dtype=bool).reshape(n, -1)
        names = tuple(str(s) for s in self.covariate_names)
        if y.shape[0] != n or y_obs.shape[0] != n:
            raise DataError("outcome length does not match treatment length")
        if X.shape != X_obs.shape or X.shape[1] != len(names):
            raise DataError("covariate matrix, mask and names disagree in shape")
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names")
        y = np.where(y_obs, y, np.nan)
        X = np.where(X_obs, X, np.nan)
        object.__setattr__(self, "treatment", _frozen(treatment))
        object.__setattr__(self, "outcome", _frozen(y))
        object.__setattr__(self, "outcome_observed", _frozen(y_obs))
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "covariates_observed", _frozen(X_obs))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_rows(self) -> int:
        return self.treatment.shape[0]

    @property
    def p(self) -> int:
        return len(self.covariate_names)


@dataclass(frozen=True, eq=False)
class BinaryTrial:
    """Trial with treatment coded as 0/1.  Both arms must be non-empty."""

    A: np.ndarray
    Y: np.ndarray
    Y_observed: np.ndarray
    X: np.ndarray
    X_observed: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        A = np.asarray(self.A)
        if A.ndim != 1 or not np.all((A == 0) | (A == 1)):
            raise DataError("treatment indicator must contain only 0 and 1")
        A = A.astype(np.int64)
        n = A.shape[0]
        if A.sum() == 0 or A.sum() == n:
            raise DataError("empty arm")
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        Y_obs = np.asarray(self.Y_observed, dtype=bool).reshape(-1)
        X = np.asarray(self.X, dtype=float).reshape(n, -1)
        X_obs = np.asarray(self.X_observed, dtype=bool).reshape(n, -1)
        names = tuple(str(s) for s in self.covariate_names)
        if Y.shape[0] != n or Y_obs.shape[0] != n:
            raise DataError("outcome length does not match treatment length")
        if X.shape != X_obs.shape or X.shape[1] != len(names):
            raise DataError("covariate matrix, mask and names disagree in shape")
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "Y", _frozen(np.where(Y_obs, Y, np.nan)))
        object.__setattr__(self, "Y_observed", _frozen(Y_obs))
        object.__setattr__(self, "X", _frozen(np.where(X_obs, X, np.nan)))
        object.__setattr__(self, "X_observed", _frozen(X_obs))
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def complete(cls, A, Y, X, names: Sequence[str] | None = None) -> "BinaryTrial":
        """Build a fully observed trial from plain arrays."""
        Y = np.asarray(Y, dtype=float)
        X = np.asarray(X, dtype=float).reshape(len(Y), -1)
        if names is None:
            names = [f"x{j + 1}" for j in range(X.shape[1])]
        return cls(A, Y, np.ones(len(Y), bool), X, np.ones(X.shape, bool), tuple(names))

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def n1(self) -> int:
        return int(self.A.sum())

    @property
    def n0(self) -> int:
        return self.n_rows - self.n1

    @property
    def is_complete(self) -> bool:
        return bool(self.Y_observed.all() and self.X_observed.all())

    def take(self, rows) -> "BinaryTrial":
        rows = np.asarray(rows)
        return replace(
            self,
            A=self.A[rows],
            Y=self.Y[rows],
            Y_observed=self.Y_observed[rows],
            X=self.X[rows],
            X_observed=self.X_observed[rows],
        )


def load_csv(path: str | os.PathLike, outcome_col: str, treatment_col: str) -> TrialDataset:
    """Read a trial from a comma-separated file with a header row.

    Every column other than the outcome and treatment becomes a covariate.
    Empty fields and the literal ``NA`` mark missing cells; any other
    non-numeric token in the outcome or a covariate is an error.
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        rows = [r for r in reader if r]

    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"duplicate header labels: {', '.join(dup)}")
    for col in (outcome_col, treatment_col):
        if col not in header:
            raise DataError(f"missing column: {col}")
    if outcome_col == treatment_col:
        raise DataError("outcome and treatment columns must differ")

    n = len(rows)
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"row {i + 1} has {len(r)} fields, expected {len(header)}")

    i_y = header.index(outcome_col)
    i_a = header.index(treatment_col)
    cov_idx = [j for j in range(len(header)) if j not in (i_y, i_a)]
    names = tuple(header[j] for j in cov_idx)

    def parse(col: int):
        vals = np.full(n, np.nan)
        obs = np.ones(n, bool)
        for i, r in enumerate(rows):
            tok = r[col].strip()
            if tok in MISSING_TOKENS:
                obs[i] = False
                continue
            try:
                vals[i] = float(tok)
            except ValueError:
                raise DataError(
                    f"non-numeric value {tok!r} in column {header[col]} row {i + 1}"
                ) from None
            if not np.isfinite(vals[i]):
                raise DataError(f"non-finite value in column {header[col]} row {i + 1}")
        return vals, obs

    treatment = np.array([r[i_a].strip() for r in rows], dtype=str)
    if np.any(np.isin(treatment, list(MISSING_TOKENS))):
        raise DataError(f"missing treatment label in column {treatment_col}")
    y, y_obs = parse(i_y)
    X = np.empty((n, len(cov_idx)))
    X_obs = np.empty((n, len(cov_idx)), bool)
    for k, j in enumerate(cov_idx):
        X[:, k], X_obs[:, k] = parse(j)
    return TrialDataset(treatment, y, y_obs, X, X_obs, names)


def write_csv(ds: TrialDataset, path: str | os.PathLike, outcome_col: str = "Y",
              treatment_col: str = "A") -> None:
    """Inverse of :func:`load_csv`; unobserved cells are written as ``NA``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([outcome_col, treatment_col, *ds.covariate_names])
        for i in range(ds.n_rows):
            y = repr(float(ds.outcome[i])) if ds.outcome_observed[i] else "NA"
            xs = [repr(float(v)) if o else "NA"
                  for v, o in zip(ds.covariates[i], ds.covariates_observed[i])]
            w.writerow([y, ds.treatment[i], *xs])


def encode_treatment(ds: TrialDataset, trt_name, ctrl_name) -> BinaryTrial:
    trt, ctrl = str(trt_name), str(ctrl_name)
    labels = ds.treatment
    unknown = sorted(set(labels.tolist()) - {trt, ctrl})
    if unknown:
        raise DataError(f"unknown treatment label(s): {', '.join(unknown)}")
    A = (labels == trt).astype(np.int64)
    if A.sum() == 0 or A.sum() == len(A):
        raise DataError("empty arm")
    return BinaryTrial(A, ds.outcome, ds.outcome_observed, ds.covariates,
                       ds.covariates_observed, ds.covariate_names)


@dataclass(frozen=True)
class MissingnessSummary:
    outcome_missing: int
    covariate_missing: dict[str, int] = field(default_factory=dict)
    complete_rows: int = 0
    n_rows: int = 0


def missingness_summary(ds: TrialDataset | BinaryTrial) -> MissingnessSummary:
    if isinstance(ds, TrialDataset):
        y_obs, X_obs = ds.outcome_observed, ds.covariates_observed
    else:
        y_obs, X_obs = ds.Y_observed, ds.X_observed
    per_col = (~X_obs).sum(axis=0)
    complete = y_obs & X_obs.all(axis=1)
    return MissingnessSummary(
        outcome_missing=int((~y_obs).sum()),
        covariate_missing={nm: int(c) for nm, c in zip(ds.covariate_names, per_col)},
        complete_rows=int(complete.sum()),
        n_rows=int(len(y_obs)),
    )
