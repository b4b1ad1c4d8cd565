"""Least squares, IRLS for generalized linear models, and scalar statistics.

Design matrices passed to :func:`ols_fit` and :func:`irls_fit` already carry
the intercept as column 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import special

RANK_TOL = 1e-10
_EPS_MU = 1e-10
_SEPARATION_DEV = 1e-4


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class LinkFamily:
    """Mean function with its derivative and the IRLS variance function."""

    tag: str
    mean: object
    dmean: object
    variance: object
    eta_bounds: tuple[float, float]
    family: str

    def __repr__(self):
        return f"LinkFamily({self.tag!r})"


def _logistic(eta):
    return special.expit(eta)


def _dlogistic(eta):
    mu = special.expit(eta)
    return mu * (1.0 - mu)


def _cloglog(eta):
    return -np.expm1(-np.exp(eta))


def _dcloglog(eta):
    return np.exp(eta - np.exp(eta))


def _binvar(mu):
    mu = np.clip(mu, _EPS_MU, 1.0 - _EPS_MU)
    return mu * (1.0 - mu)


_IDENTITY = LinkFamily("identity", lambda e: e, np.ones_like, np.ones_like,
                       (-np.inf, np.inf), "gaussian")
_LOGIT = LinkFamily("logit", _logistic, _dlogistic, _binvar,
                    (-special.logit(1 - _EPS_MU), special.logit(1 - _EPS_MU)), "binomial")
_PROBIT = LinkFamily("probit", special.ndtr, lambda e: np.exp(-0.5 * e * e) / np.sqrt(2 * np.pi),
                     _binvar, (special.ndtri(_EPS_MU), -special.ndtri(_EPS_MU)), "binomial")
_CLOGLOG = LinkFamily("cloglog", _cloglog, _dcloglog, _binvar,
                      (np.log(-np.log1p(-_EPS_MU)), np.log(-np.log(_EPS_MU))), "binomial")
_LOG = LinkFamily("log", np.exp, np.exp, lambda mu: np.maximum(mu, _EPS_MU),
                  (-700.0, 700.0), "poisson")

LINKS = {
    "identity": _IDENTITY,
    "linear": _IDENTITY,
    "logit": _LOGIT,
    "probit": _PROBIT,
    "cloglog": _CLOGLOG,
    "log": _LOG,
}


def get_link(name: str | LinkFamily) -> LinkFamily:
    if isinstance(name, LinkFamily):
        return name
    try:
        return LINKS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


@dataclass
class GlmFit:
    link: LinkFamily
    beta: np.ndarray
    converged: bool
    n_iter: int
    fitted: np.ndarray
    residuals: np.ndarray
    rank_deficient: bool
    rank: int = 0
    deviance_trace: list = field(default_factory=list)

    @property
    def deviance(self) -> float:
        return self.deviance_trace[-1] if self.deviance_trace else float("nan")


def _check_xy(X, y, weights):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty input")
    if y.shape != (X.shape[0],):
        raise ValueError(f"dimension mismatch: X has {X.shape[0]} rows, y has {y.shape}")
    if weights is None:
        w = np.ones(X.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError("dimension mismatch: weights")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative and not all zero")
    return X, y, w


def numerical_rank(X: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank from QR with column pivoting; pivots below ``tol * |r_11|`` count as zero."""
    if X.size == 0:
        return 0
    R = scipy.linalg.qr(X, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return 0
    return int(np.sum(d > tol * d[0]))


def _wls(X, z, w):
    """Weighted least squares; returns (beta, rank, rank_deficient)."""
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    zw = z * sw
    p = X.shape[1]
    if p == 0:
        return np.zeros(0), 0, False
    Q, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > RANK_TOL * d[0])) if d.size and d[0] > 0 else 0
    if rank == p:
        beta = np.empty(p)
        beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ zw)
        return beta, rank, False
    beta = scipy.linalg.lstsq(Xw, zw, cond=RANK_TOL)[0]
    return beta, rank, True


def ols_fit(X, y, weights=None) -> GlmFit:
    """(Weighted) least squares via pivoted QR, minimum-norm when rank deficient."""
    X, y, w = _check_xy(X, y, weights)
    beta, rank, deficient = _wls(X, y, w)
    fitted = X @ beta
    resid = y - fitted
    return GlmFit(_IDENTITY, beta, True, 1, fitted, resid, deficient, rank,
                  [float(np.sum(w * resid ** 2))])


def _deviance(family: str, y, mu, w) -> float:
    if family == "gaussian":
        return float(np.sum(w * (y - mu) ** 2))
    if family == "binomial":
        mu = np.clip(mu, _EPS_MU, 1 - _EPS_MU)
        d = special.xlogy(y, y / mu) + special.xlogy(1 - y, (1 - y) / (1 - mu))
        return float(2 * np.sum(w * d))
    mu = np.maximum(mu, _EPS_MU)
    d = special.xlogy(y, y / mu) - (y - mu)
    return float(2 * np.sum(w * d))


def irls_fit(X, y, link="identity", weights=None, max_iter: int = 100,
             tol: float = 1e-8, start=None) -> GlmFit:
    """Maximum likelihood for ``E[y|x] = g(x'beta)`` by Fisher scoring.

    Starts from ``beta = 0`` and halves the step whenever the deviance would
    increase.  Divergence (non-finite working quantities, or no convergence
    within ``max_iter``) is reported through ``converged=False``.
    """
    link = get_link(link)
    if link.family == "gaussian":
        return ols_fit(X, y, weights)
    X, y, w = _check_xy(X, y, weights)
    if max_iter < 1 or tol <= 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    if link.family == "binomial" and np.any((y < 0) | (y > 1)):
        raise ValueError(f"outcome outside [0, 1] for link {link.tag}")
    if link.family == "poisson" and np.any(y < 0):
        raise ValueError("negative outcome for log link")

    n, p = X.shape
    lo, hi = link.eta_bounds
    beta = np.zeros(p) if start is None else np.asarray(start, dtype=float).copy()
    eta = X @ beta
    mu = link.mean(eta)
    dev = _deviance(link.family, y, mu, w)
    trace = [dev]
    converged = False
    rank, deficient = p, False
    it = 0
    for it in range(1, max_iter + 1):
        eta_c = np.clip(eta, lo, hi)
        mu_c = link.mean(eta_c)
        gp = link.dmean(eta_c)
        W = w * gp ** 2 / link.variance(mu_c)
        z = eta_c + (y - mu_c) / gp
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(z))):
            break
        new, rank, deficient = _wls(X, z, W)
        if not np.all(np.isfinite(new)):
            break
        new_dev = _deviance(link.family, y, link.mean(X @ new), w)
        halvings = 0
        while not new_dev <= dev + 1e-10 * (abs(dev) + 1.0) and halvings < 30:
            new = 0.5 * (beta + new)
            new_dev = _deviance(link.family, y, link.mean(X @ new), w)
            halvings += 1
        if not new_dev <= dev + 1e-10 * (abs(dev) + 1.0):
            break
        step = float(np.max(np.abs(new - beta))) if p else 0.0
        beta, dev = new, new_dev
        eta = X @ beta
        trace.append(dev)
        if step <= tol:
            converged = True
            break

    if converged and link.family == "binomial" and dev <= _SEPARATION_DEV * w.sum():
        # every row fitted perfectly: separated data, the MLE lies at infinity
        converged = False
    mu = link.mean(X @ beta)
    return GlmFit(link, beta, converged, it, mu, y - mu, deficient, rank, trace)


def predict_mean(fit: GlmFit, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if X.shape[0] == fit.beta.shape[0] else X[:, None]
    if X.shape[1] != fit.beta.shape[0]:
        raise ValueError(
            f"dimension mismatch: design has {X.shape[1]} columns, fit has {fit.beta.shape[0]}"
        )
    return fit.link.mean(X @ fit.beta)


def pearson_corr(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("dimension mismatch")
    if x.shape[0] < 2:
        raise ValueError("need at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx <= 0 or syy <= 0:
        raise ZeroVarianceError("zero variance: correlation undefined")
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class WelchResult:
    statistic: float
    pvalue: float
    df: float


def welch_t_test(x1, x0) -> WelchResult:
    """Two-sided Welch t-test with Satterthwaite degrees of freedom."""
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    n1, n0 = len(x1), len(x0)
    if n1 < 2 or n0 < 2:
        raise ValueError("group too small")
    v1 = x1.var(ddof=1) / n1
    v0 = x0.var(ddof=1) / n0
    se2 = v1 + v0
    diff = x1.mean() - x0.mean()
    if se2 <= 0:
        raise ZeroVarianceError("zero variance in both groups")
    t = diff / np.sqrt(se2)
    df = se2 ** 2 / (v1 ** 2 / (n1 - 1) + v0 ** 2 / (n0 - 1))
    p = 2.0 * special.stdtr(df, -abs(t))
    return WelchResult(float(t), float(min(p, 1.0)), float(df))
