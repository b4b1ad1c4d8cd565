"""L1-penalized regression by cyclic coordinate descent.

The objective is ``(1/n) * loss + lam * sum_j w_j |beta_j|`` with half the
residual sum of squares as the gaussian loss and the negative log-likelihood
as the binomial loss.  Columns are standardized internally (population SD);
coefficients are returned on the caller's scale with the intercept first and
never penalized.  Binomial fits use an outer quadratic approximation of the
log-likelihood around the current iterate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .glm import ols_fit, numerical_rank

CD_TOL = 1e-7
N_LAMBDA = 100
LAMBDA_RATIO = 1e-3
N_FOLDS = 10
_W_FLOOR = 1e-5
_MAX_SWEEPS = 100_000
_MAX_OUTER = 100


@njit(cache=True)
def _wcd(Xs, W, pen, lam, b0, beta, r, xwx, tol, max_sweeps):
    # Minimizes (1/2n) sum_i W_i (z_i - b0 - x_i'beta)^2 + lam sum_j pen_j |beta_j|
    # with r = z - b0 - X beta maintained in place.
    n, p = Xs.shape
    sw = 0.0
    for i in range(n):
        sw += W[i]
    active_only = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        maxd = 0.0
        for j in range(p):
            if not np.isfinite(pen[j]) or xwx[j] <= 0.0:
                continue
            if active_only and beta[j] == 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += W[i] * Xs[i, j] * r[i]
            g = g / n + xwx[j] * beta[j]
            thr = lam * pen[j]
            if g > thr:
                bn = (g - thr) / xwx[j]
            elif g < -thr:
                bn = (g + thr) / xwx[j]
            else:
                bn = 0.0
            d = bn - beta[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * Xs[i, j]
                beta[j] = bn
                if abs(d) > maxd:
                    maxd = abs(d)
        db = 0.0
        for i in range(n):
            db += W[i] * r[i]
        db /= sw
        if db != 0.0:
            for i in range(n):
                r[i] -= db
            b0 += db
            if abs(db) > maxd:
                maxd = abs(db)
        if maxd <= tol:
            if active_only:
                active_only = False
            else:
                break
        else:
            active_only = True
    return b0, sweeps


@njit(cache=True)
def _path(Xs, y, pen, lambdas, binomial, tol, max_sweeps, max_outer, b0, beta):
    n, p = Xs.shape
    L = lambdas.shape[0]
    b0s = np.empty(L)
    betas = np.empty((L, p))
    r = np.empty(n)
    W = np.ones(n)
    xwx = np.empty(p)
    eta = np.empty(n)
    if not binomial:
        for j in range(p):
            s = 0.0
            for i in range(n):
                s += Xs[i, j] * Xs[i, j]
            xwx[j] = s / n
    for k in range(L):
        lam = lambdas[k]
        if not binomial:
            for i in range(n):
                s = b0
                for j in range(p):
                    if beta[j] != 0.0:
                        s += Xs[i, j] * beta[j]
                r[i] = y[i] - s
            b0, _ = _wcd(Xs, W, pen, lam, b0, beta, r, xwx, tol, max_sweeps)
        else:
            for outer in range(max_outer):
                for i in range(n):
                    s = b0
                    for j in range(p):
                        if beta[j] != 0.0:
                            s += Xs[i, j] * beta[j]
                    eta[i] = s
                for i in range(n):
                    mu = 1.0 / (1.0 + np.exp(-eta[i]))
                    w = mu * (1.0 - mu)
                    if w < 1e-5:
                        w = 1e-5
                    W[i] = w
                    r[i] = (y[i] - mu) / w
                for j in range(p):
                    s = 0.0
                    for i in range(n):
                        s += W[i] * Xs[i, j] * Xs[i, j]
                    xwx[j] = s / n
                old_b0 = b0
                old = beta.copy()
                b0, _ = _wcd(Xs, W, pen, lam, b0, beta, r, xwx, tol, max_sweeps)
                maxd = abs(b0 - old_b0)
                for j in range(p):
                    d = abs(beta[j] - old[j])
                    if d > maxd:
                        maxd = d
                if maxd <= tol:
                    break
        b0s[k] = b0
        for j in range(p):
            betas[k, j] = beta[j]
    return b0s, betas


def _family_flag(family: str) -> bool:
    if family not in ("gaussian", "binomial"):
        raise ValueError(f"unsupported lasso family {family!r}; use gaussian or binomial")
    return family == "binomial"


@dataclass
class _Standardized:
    Xs: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    constant: np.ndarray


def _standardize(X: np.ndarray) -> _Standardized:
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
    safe = np.where(constant, 1.0, scale)
    Xs = (X - center) / safe
    Xs[:, constant] = 0.0
    return _Standardized(np.asfortranarray(Xs), center, safe, constant)


def _prepare_penalty(p: int, penalty_weights, constant: np.ndarray) -> np.ndarray:
    if penalty_weights is None:
        pen = np.ones(p)
    else:
        pen = np.asarray(penalty_weights, dtype=float).copy()
        if pen.shape != (p,):
            raise ValueError("penalty_weights must have one entry per column")
        if np.any(np.isnan(pen)) or np.any(pen < 0):
            raise ValueError("penalty weights must be >= 0")
    pen[constant] = np.inf
    finite = np.isfinite(pen)
    if finite.any() and pen[finite].sum() > 0:
        pen[finite] = pen[finite] * finite.sum() / pen[finite].sum()
    return pen


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return X, y


def lambda_max(X, y, family: str = "gaussian", penalty_weights=None) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    X, y = _check_inputs(X, y)
    _family_flag(family)
    st = _standardize(X)
    pen = _prepare_penalty(X.shape[1], penalty_weights, st.constant)
    return _lambda_max_std(st.Xs, y, pen)


def _lambda_max_std(Xs, y, pen) -> float:
    n = Xs.shape[0]
    g = np.abs(Xs.T @ (y - y.mean())) / n
    ok = np.isfinite(pen) & (pen > 0)
    if not ok.any():
        return 0.0
    return float(np.max(g[ok] / pen[ok]))


def _tol(tol, y, binomial):
    # convergence is judged on the scale of the response
    if binomial:
        return tol
    return tol * max(float(y.std()), 1e-12)


def _initial(y, binomial):
    if binomial:
        m = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        return np.log(m / (1 - m))
    return float(y.mean())


def _to_original(st: _Standardized, b0s, betas):
    coefs = betas / st.scale
    coefs[:, st.constant] = 0.0
    ints = b0s - coefs @ st.center
    return np.column_stack([ints, coefs])


def lasso_path(X, y, family: str = "gaussian", lambdas=None, penalty_weights=None,
               tol: float = CD_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient path over a decreasing penalty grid, warm-started.

    Returns ``(lambdas, coefs)`` with ``coefs[k] = (intercept, beta...)``.
    """
    X, y = _check_inputs(X, y)
    binomial = _family_flag(family)
    st = _standardize(X)
    pen = _prepare_penalty(X.shape[1], penalty_weights, st.constant)
    if lambdas is None:
        lambdas = lambda_grid(_lambda_max_std(st.Xs, y, pen))
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise ValueError("lambda must be >= 0")
    beta = np.zeros(X.shape[1])
    b0s, betas = _path(st.Xs, y, pen, lambdas, binomial, _tol(tol, y, binomial), _MAX_SWEEPS, _MAX_OUTER,
                       _initial(y, binomial), beta)
    return lambdas, _to_original(st, b0s, betas)


def lasso_cd(X, y, family: str = "gaussian", lam: float = 0.0, warm_start=None,
             penalty_weights=None, tol: float = CD_TOL) -> np.ndarray:
    """Penalized fit at a single ``lam``; returns ``(intercept, beta...)``."""
    X, y = _check_inputs(X, y)
    binomial = _family_flag(family)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    st = _standardize(X)
    pen = _prepare_penalty(X.shape[1], penalty_weights, st.constant)
    if warm_start is None:
        b0 = _initial(y, binomial)
        beta = np.zeros(X.shape[1])
    else:
        warm = np.asarray(warm_start, dtype=float)
        beta = warm[1:] * st.scale
        beta[~np.isfinite(pen)] = 0.0
        b0 = float(warm[0] + warm[1:] @ st.center)
    b0s, betas = _path(st.Xs, y, pen, np.array([float(lam)]), binomial, _tol(tol, y, binomial),
                       _MAX_SWEEPS, _MAX_OUTER, b0, beta)
    return _to_original(st, b0s, betas)[0]


def lambda_grid(lmax: float, n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    if lmax <= 0:
        return np.zeros(1)
    return np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_lambda))


@dataclass
class LassoFit:
    lambda_grid: np.ndarray
    coef_path: np.ndarray
    cv_error: np.ndarray
    lambda_min: float
    active_set: np.ndarray
    coef: np.ndarray
    degenerate_folds: list = field(default_factory=list)

    @property
    def index_min(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_min)[0])


def fold_ids(n: int, n_folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % n_folds
    return ids


def _loss(y, eta, binomial):
    if binomial:
        # binomial deviance per observation
        return 2.0 * (np.logaddexp(0.0, eta) - y * eta)
    return (y - eta) ** 2


def cv_lasso(X, y, family: str = "gaussian", n_folds: int = N_FOLDS, n_lambda: int = N_LAMBDA,
             seed: int = 0, penalty_weights=None) -> LassoFit:
    """K-fold cross-validated lasso; picks the penalty minimizing mean validation loss.

    Ties in the cross-validated error go to the larger penalty.
    """
    X, y = _check_inputs(X, y)
    binomial = _family_flag(family)
    n, p = X.shape
    n_folds = min(n_folds, n)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if binomial and np.any((y != 0) & (y != 1)):
        raise ValueError("binomial lasso needs a 0/1 outcome")

    st = _standardize(X)
    pen = _prepare_penalty(p, penalty_weights, st.constant)
    lambdas = lambda_grid(_lambda_max_std(st.Xs, y, pen), n_lambda)
    _, path = lasso_path(X, y, family, lambdas, pen)

    ids = fold_ids(n, n_folds, seed)
    loss_sum = np.zeros(len(lambdas))
    n_used = 0
    skipped = []
    for k in range(n_folds):
        test = ids == k
        train = ~test
        ytr = y[train]
        if binomial and (ytr.min() == ytr.max()):
            skipped.append(k)
            continue
        _, cp = lasso_path(X[train], ytr, family, lambdas, pen)
        eta = cp[:, :1].T + X[test] @ cp[:, 1:].T
        loss_sum += _loss(y[test][:, None], eta, binomial).sum(axis=0)
        n_used += int(test.sum())
    if n_used == 0:
        raise ValueError("all cross-validation folds are degenerate")
    if skipped:
        warnings.warn(f"skipped {len(skipped)} single-class fold(s) in binomial CV", stacklevel=2)
    cv_error = loss_sum / n_used
    k_min = int(np.argmin(cv_error))
    coef = path[k_min]
    active = np.flatnonzero(coef[1:] != 0.0)
    return LassoFit(lambdas, path, cv_error, float(lambdas[k_min]), active, coef, skipped)


def _ridge_init(X, y) -> np.ndarray:
    st = _standardize(X)
    Xc = st.Xs
    p = Xc.shape[1]
    XtX = Xc.T @ Xc
    pen = 1e-3 * np.trace(XtX) / max(p, 1)
    b = np.linalg.solve(XtX + pen * np.eye(p), Xc.T @ (y - y.mean()))
    b[st.constant] = 0.0
    return b / st.scale


@dataclass
class AdaptiveLassoFit:
    coef: np.ndarray
    active_set: np.ndarray
    penalty_weights: np.ndarray
    initial: np.ndarray
    cv: LassoFit


def adaptive_lasso(X, y, family: str = "gaussian", n_folds: int = N_FOLDS, seed: int = 0,
                   gamma: float = 1.0, initial=None) -> AdaptiveLassoFit:
    """Lasso with penalty weights ``1/|b_j|**gamma`` from an unpenalized least-squares start.

    The initial coefficients are taken on the standardized scale so the
    weights do not depend on covariate units.  When the design is rank
    deficient a small ridge penalty stands in for least squares.  A zero
    initial coefficient gets an infinite weight and never enters the model.
    """
    X, y = _check_inputs(X, y)
    n, p = X.shape
    sd = X.std(axis=0)
    if initial is None:
        design = np.column_stack([np.ones(n), X])
        if numerical_rank(design) == p + 1:
            initial = ols_fit(design, y).beta[1:]
        else:
            initial = _ridge_init(X, y)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (p,):
        raise ValueError("initial coefficients must have one entry per column")
    mag = np.abs(initial * sd)
    with np.errstate(divide="ignore"):
        weights = np.where(mag > 0, mag ** (-gamma), np.inf)
    fit = cv_lasso(X, y, family, n_folds=n_folds, seed=seed, penalty_weights=weights)
    return AdaptiveLassoFit(fit.coef, fit.active_set, weights, initial, fit)
