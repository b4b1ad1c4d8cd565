"""Covariate selection strategies over a fully observed trial.

Every strategy yields a pooled index set (consumed by ANCOVA and ANHECOVA)
and one set per arm (consumed by AIPW, whose two outcome models may use
different covariates).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import BinaryTrial, DataError
from .glm import ZeroVarianceError, pearson_corr, welch_t_test
from .lasso import adaptive_lasso, cv_lasso

METHODS = ("none", "lasso", "adaptive_lasso", "corr_k", "corr_xi", "pre_test")

# CLI spellings of the selection methods
METHOD_ALIASES = {
    "no": "none",
    "none": "none",
    "all": "none",
    "lasso": "lasso",
    "a.lasso": "adaptive_lasso",
    "adaptive_lasso": "adaptive_lasso",
    "corr.k": "corr_k",
    "corr_k": "corr_k",
    "corr.xi": "corr_xi",
    "corr_xi": "corr_xi",
    "pre.test": "pre_test",
    "pre_test": "pre_test",
}


@dataclass(frozen=True)
class SelectionSpec:
    method: str = "lasso"
    k: int = 1
    xi: float = 0.25
    alpha: float = 0.05
    family: str | None = None
    seed: int = 4399
    n_folds: int = 10

    def __post_init__(self):
        m = METHOD_ALIASES.get(str(self.method).lower())
        if m is None:
            raise ValueError(f"unknown selection method {self.method!r}")
        object.__setattr__(self, "method", m)
        if m == "corr_k" and int(self.k) < 1:
            raise ValueError("k must be >= 1")
        if m == "corr_xi" and not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if m == "pre_test" and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.family not in (None, "gaussian", "binomial"):
            raise ValueError(f"unsupported lasso family {self.family!r}")


@dataclass
class SelectionResult:
    method: str
    pooled: np.ndarray
    per_arm: tuple[np.ndarray, np.ndarray]
    names: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def names_of(self, idx) -> list[str]:
        return [self.names[j] for j in idx]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "pooled": self.names_of(self.pooled),
            "arm0": self.names_of(self.per_arm[0]),
            "arm1": self.names_of(self.per_arm[1]),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_index(idx) -> np.ndarray:
    return np.unique(np.asarray(idx, dtype=np.int64))


def _abs_correlations(X, y):
    """|corr| per column; NaN where the covariate (or y) has zero variance."""
    out = np.full(X.shape[1], np.nan)
    for j in range(X.shape[1]):
        try:
            out[j] = abs(pearson_corr(X[:, j], y))
        except ZeroVarianceError:
            pass
    return out


def select_corr_k(X, y, k: int, notes: list | None = None) -> np.ndarray:
    X = np.asarray(X, float)
    if k < 1:
        raise ValueError("k must be >= 1")
    r = _abs_correlations(X, y)
    valid = np.flatnonzero(~np.isnan(r))
    if valid.size == 0:
        if notes is not None:
            notes.append("all covariates have zero variance")
        return np.zeros(0, np.int64)
    if k > valid.size and notes is not None:
        notes.append(f"k={k} exceeds {valid.size} usable covariates; clamped")
    # stable sort on -|r| keeps the lower column index first among ties
    order = valid[np.argsort(-r[valid], kind="stable")]
    return _as_index(order[:k])


def select_corr_xi(X, y, xi: float) -> np.ndarray:
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    r = _abs_correlations(np.asarray(X, float), y)
    with np.errstate(invalid="ignore"):
        return _as_index(np.flatnonzero(r > xi))


def select_pretest(X, A, alpha: float, notes: list | None = None):
    """Welch test of each covariate between arms; keep those with p <= alpha."""
    X = np.asarray(X, float)
    A = np.asarray(A)
    pvals = np.full(X.shape[1], np.nan)
    for j in range(X.shape[1]):
        try:
            pvals[j] = welch_t_test(X[A == 1, j], X[A == 0, j]).pvalue
        except ZeroVarianceError:
            if notes is not None:
                notes.append(f"covariate {j} constant in both arms; skipped")
    with np.errstate(invalid="ignore"):
        return _as_index(np.flatnonzero(pvals <= alpha)), pvals


def _lasso_set(X, y, spec: SelectionSpec, family: str) -> np.ndarray:
    if np.ptp(y) == 0:
        return np.zeros(0, np.int64)
    if spec.method == "lasso":
        return _as_index(cv_lasso(X, y, family, n_folds=spec.n_folds, seed=spec.seed).active_set)
    return _as_index(adaptive_lasso(X, y, family, n_folds=spec.n_folds, seed=spec.seed).active_set)


def default_family(y) -> str:
    return "binomial" if np.unique(y).size == 2 and set(np.unique(y)) <= {0.0, 1.0} else "gaussian"


def select(spec: SelectionSpec, trial: BinaryTrial) -> SelectionResult:
    if not trial.is_complete:
        raise DataError("selection needs a fully observed trial; impute first")
    X, y, A = trial.X, trial.Y, trial.A
    p = X.shape[1]
    full = np.arange(p, dtype=np.int64)
    notes: list[str] = []
    diag: dict = {}
    arms = [np.flatnonzero(A == a) for a in (0, 1)]
    for a, rows in enumerate(arms):
        if rows.size < 2:
            raise DataError(f"arm {a} too small for selection")

    if spec.method == "none" or p == 0:
        return SelectionResult("none" if p else spec.method, full, (full, full),
                               trial.covariate_names, diag, notes)

    if spec.method == "pre_test":
        pooled, pvals = select_pretest(X, A, spec.alpha, notes)
        diag["pvalues"] = pvals.tolist()
        return SelectionResult(spec.method, pooled, (pooled, pooled),
                               trial.covariate_names, diag, notes)

    if spec.method == "corr_k":
        pooled = select_corr_k(X, y, int(spec.k), notes)
        per = tuple(select_corr_k(X[r], y[r], int(spec.k), notes) for r in arms)
        diag["abs_corr"] = _abs_correlations(X, y).tolist()
    elif spec.method == "corr_xi":
        pooled = select_corr_xi(X, y, spec.xi)
        per = tuple(select_corr_xi(X[r], y[r], spec.xi) for r in arms)
        diag["abs_corr"] = _abs_correlations(X, y).tolist()
    else:
        family = spec.family or default_family(y)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            pooled = _lasso_set(X, y, spec, family)
            per = tuple(_lasso_set(X[r], y[r], spec, family) for r in arms)
        notes.extend(str(w.message) for w in caught)
        diag["family"] = family
    return SelectionResult(spec.method, pooled, per, trial.covariate_names, diag, notes)
