"""Missing-data handling ahead of selection and estimation.

Four methods: complete cases, chained-equations imputation (one completed
dataset per run), inverse-probability weighting for missing outcomes, and
missingness indicators for covariates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import BinaryTrial, DataError
from .glm import irls_fit, ols_fit

log = logging.getLogger(__name__)

METHODS = ("cc", "chained", "ipw", "miss_ind")
METHOD_ALIASES = {
    "cc": "cc",
    "mice": "chained",
    "chained": "chained",
    "ipw": "ipw",
    "missind": "miss_ind",
    "miss_ind": "miss_ind",
}
IPW_WEIGHT_CAP = 100.0


class UnsupportedMethodError(ValueError):
    pass


@dataclass(frozen=True)
class ImputationSpec:
    method: str = "cc"
    n_cycles: int = 10
    fill: float = 0.0
    seed: int = 4399

    def __post_init__(self):
        key = str(self.method).lower()
        if key == "missforest":
            raise UnsupportedMethodError(
                "missForest (random-forest imputation) is not provided; "
                "use mice (chained equations) instead"
            )
        m = METHOD_ALIASES.get(key)
        if m is None:
            raise ValueError(f"unknown imputation method {self.method!r}")
        object.__setattr__(self, "method", m)
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")


@dataclass
class ImputedTrial:
    trial: BinaryTrial
    row_weights: np.ndarray
    dropped_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    added_columns: tuple[str, ...] = ()
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.trial.is_complete:
            raise AssertionError("imputation left unobserved cells")
        w = self.row_weights
        if w.shape != (self.trial.n_rows,) or not np.all(np.isfinite(w) & (w > 0)):
            raise AssertionError("row weights must be finite and positive")


def _check_arms(trial: BinaryTrial, keep: np.ndarray, minimum: int = 2):
    for a in (1, 0):
        if np.sum(keep & (trial.A == a)) < minimum:
            raise DataError(f"arm exhausted: {a}")


def impute_cc(trial: BinaryTrial) -> ImputedTrial:
    keep = trial.Y_observed & trial.X_observed.all(axis=1)
    _check_arms(trial, keep)
    rows = np.flatnonzero(keep)
    return ImputedTrial(trial.take(rows), np.ones(rows.size), np.flatnonzero(~keep))


def _is_binary(v: np.ndarray) -> bool:
    u = np.unique(v)
    return u.size == 2 and u[0] == 0.0 and u[1] == 1.0


def impute_chained(trial: BinaryTrial, n_cycles: int = 10, seed: int = 4399) -> ImputedTrial:
    """Chained-equations imputation returning a single completed dataset.

    Missing cells start at the column mean (mode for 0/1 columns).  Each
    cycle visits the outcome and then the covariates in column order and,
    for each column with missing cells, regresses it on the treatment
    indicator and every other column (linear, or logistic for 0/1 columns)
    using the observed rows, then redraws the missing cells from the fitted
    predictive distribution.
    """
    if trial.is_complete:
        return ImputedTrial(trial, np.ones(trial.n_rows))
    rng = np.random.default_rng(seed)
    data = np.column_stack([trial.Y, trial.X])
    obs = np.column_stack([trial.Y_observed, trial.X_observed])
    n, m = data.shape
    binary = []
    for j in range(m):
        vals = data[obs[:, j], j]
        if vals.size < 2:
            raise DataError(f"column {j} has fewer than two observed values")
        binary.append(_is_binary(vals))
        if binary[j]:
            fill = float(vals.mean() >= 0.5)
        else:
            fill = vals.mean()
        data[~obs[:, j], j] = fill

    notes = []
    targets = [j for j in range(m) if not obs[:, j].all()]
    for cycle in range(n_cycles):
        for j in targets:
            miss = ~obs[:, j]
            others = [k for k in range(m) if k != j]
            design = np.column_stack([np.ones(n), trial.A, data[:, others]])
            seen = obs[:, j]
            vals = data[seen, j]
            if binary[j]:
                fit = irls_fit(design[seen], vals, "logit")
                ok = fit.converged and not fit.rank_deficient
                if ok:
                    prob = fit.link.mean(design[miss] @ fit.beta)
                    data[miss, j] = (rng.random(miss.sum()) < prob).astype(float)
            else:
                fit = ols_fit(design[seen], vals)
                dof = seen.sum() - fit.rank
                ok = not fit.rank_deficient and dof > 0
                if ok:
                    sd = np.sqrt(np.sum(fit.residuals ** 2) / dof)
                    data[miss, j] = design[miss] @ fit.beta + sd * rng.standard_normal(miss.sum())
            if not ok:
                fallback = float(vals.mean() >= 0.5) if binary[j] else vals.mean()
                data[miss, j] = fallback
                notes.append(f"cycle {cycle}: column {j} regression infeasible; mean/mode refill")

    done = BinaryTrial(trial.A, data[:, 0], np.ones(n, bool), data[:, 1:],
                       np.ones((n, m - 1), bool), trial.covariate_names)
    return ImputedTrial(done, np.ones(n), notes=notes)


def ipw_missing_outcome(trial: BinaryTrial) -> ImputedTrial:
    """Drop rows with missing outcome and reweight the rest by 1/P(observed | A, X)."""
    if not trial.X_observed.all():
        raise DataError("ipw handles missing outcomes only; covariates have missing cells "
                        "(use cc, mice or missInd)")
    R = trial.Y_observed
    if R.all():
        return ImputedTrial(trial, np.ones(trial.n_rows))
    _check_arms(trial, R)
    A = trial.A[:, None]
    design = np.column_stack([np.ones(trial.n_rows), trial.A, trial.X, A * trial.X])
    fit = irls_fit(design, R.astype(float), "logit")
    notes = []
    if not fit.converged:
        notes.append("observation model did not converge")
    prob = fit.fitted[R]
    raw = 1.0 / np.maximum(prob, 1e-12)
    w = np.clip(raw, 1.0, IPW_WEIGHT_CAP)
    if np.any(raw > IPW_WEIGHT_CAP):
        msg = f"{int(np.sum(raw > IPW_WEIGHT_CAP))} ipw weight(s) clamped at {IPW_WEIGHT_CAP:g}"
        log.info(msg)
        notes.append(msg)
    rows = np.flatnonzero(R)
    return ImputedTrial(trial.take(rows), w, np.flatnonzero(~R), notes=notes)


def impute_miss_ind(trial: BinaryTrial, fill: float = 0.0) -> ImputedTrial:
    if not trial.Y_observed.all():
        raise DataError("missInd handles missing covariates only; the outcome has missing "
                        "cells (use cc, mice or ipw)")
    if trial.X_observed.all():
        return ImputedTrial(trial, np.ones(trial.n_rows))
    X = np.where(trial.X_observed, trial.X, fill)
    cols = [X]
    names = list(trial.covariate_names)
    added = []
    for j, nm in enumerate(trial.covariate_names):
        miss = ~trial.X_observed[:, j]
        if miss.any():
            cols.append(miss.astype(float)[:, None])
            added.append(f"{nm}__miss")
    names.extend(added)
    Xn = np.column_stack(cols)
    done = BinaryTrial(trial.A, trial.Y, trial.Y_observed, Xn, np.ones(Xn.shape, bool), names)
    return ImputedTrial(done, np.ones(trial.n_rows), added_columns=tuple(added))


def impute(spec: ImputationSpec, trial: BinaryTrial) -> ImputedTrial:
    if spec.method == "cc":
        return impute_cc(trial)
    if spec.method == "chained":
        return impute_chained(trial, spec.n_cycles, spec.seed)
    if spec.method == "ipw":
        return ipw_missing_outcome(trial)
    return impute_miss_ind(trial, spec.fill)
