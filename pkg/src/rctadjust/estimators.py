"""Average treatment effect estimators with robust variances.

Simple difference in means (Neyman variance), ANCOVA and ANHECOVA (HC0
sandwich, the latter with the super-population correction), and AIPW with
GLM working models (moment-based variance of the arm means).  Numerical
failure never raises: the standard error becomes unavailable and a
diagnostic flag records why.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import special

from .glm import RANK_TOL, LinkFamily, get_link, irls_fit

FLAG_RANK = "rank_deficient"
FLAG_NEGVAR = "negative_variance"
FLAG_GLM = "glm_nonconverged"
FLAG_SMALL = "small_arm"

TABLE_COLUMNS = ("method", "tau", "se", "ci.lwr", "ci.upr", "p")


@dataclass
class AteEstimate:
    method: str
    tau_hat: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None
    conf_level: float = 0.95
    diagnostics: dict = field(default_factory=dict)

    @property
    def se_available(self) -> bool:
        return self.se is not None

    def covers(self, tau: float) -> bool:
        return self.se is not None and self.ci_low <= tau <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tau": self.tau_hat,
            "se": self.se,
            "ci.lwr": self.ci_low,
            "ci.upr": self.ci_high,
            "p": self.p_value,
            "conf_level": self.conf_level,
            "diagnostics": dict(self.diagnostics),
        }


def _finish(method, tau, var, conf_level=0.95, flags=None) -> AteEstimate:
    flags = dict(flags or {})
    est = AteEstimate(method, float(tau), conf_level=conf_level, diagnostics=flags)
    if var is None or not math.isfinite(var) or not math.isfinite(tau):
        return est
    if var < 0:
        est.diagnostics[FLAG_NEGVAR] = True
        return est
    se = math.sqrt(var)
    z = float(special.ndtri(0.5 + conf_level / 2))
    est.se = se
    est.ci_low = tau - z * se
    est.ci_high = tau + z * se
    if se > 0:
        est.p_value = float(2 * special.ndtr(-abs(tau) / se))
    else:
        est.p_value = 1.0 if tau == 0 else 0.0
    return est


def _weights(w, n):
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("row weights must be finite, positive, one per row")
    return w


def _wmean(x, w):
    return float(np.sum(w * x) / np.sum(w))


def _wcov(x, y, w):
    """Weighted covariance; equals the usual (n - 1)-denominator one for unit weights."""
    sw = w.sum()
    denom = sw - np.sum(w ** 2) / sw
    if denom <= 0:
        return float("nan")
    return float(np.sum(w * (x - _wmean(x, w)) * (y - _wmean(y, w))) / denom)


def _neff(w):
    return float(w.sum() ** 2 / np.sum(w ** 2))


def _prep(A, Y, X, weights):
    A = np.asarray(A).astype(np.int64)
    Y = np.asarray(Y, dtype=float)
    n = A.shape[0]
    if Y.shape != (n,):
        raise ValueError("dimension mismatch between A and Y")
    if X is None:
        X = np.zeros((n, 0))
    X = np.asarray(X, dtype=float).reshape(n, -1)
    if A.sum() == 0 or A.sum() == n:
        raise ValueError("both arms must be non-empty")
    return A, Y, X, _weights(weights, n)


def simple_estimator(A, Y, row_weights=None, conf_level: float = 0.95) -> AteEstimate:
    A, Y, _, w = _prep(A, Y, None, row_weights)
    means, var = [], 0.0
    flags = {}
    for a in (1, 0):
        m = A == a
        means.append(_wmean(Y[m], w[m]))
        if m.sum() < 2:
            flags[FLAG_SMALL] = True
            continue
        var += _wcov(Y[m], Y[m], w[m]) / _neff(w[m])
    return _finish("simple", means[0] - means[1], None if flags else var, conf_level, flags)


def _sandwich(V, y, w):
    """WLS fit and HC0 sandwich covariance; covariance is None when V'WV is singular."""
    sw = np.sqrt(w)
    Vw = V * sw[:, None]
    Q, R, piv = scipy.linalg.qr(Vw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    k = V.shape[1]
    rank = int(np.sum(d > RANK_TOL * d[0])) if d.size and d[0] > 0 else 0
    if rank < k:
        beta = scipy.linalg.lstsq(Vw, y * sw, cond=RANK_TOL)[0]
        return beta, None
    beta = np.empty(k)
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ (y * sw))
    resid = y - V @ beta
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    bread = np.empty((k, k))
    bread[np.ix_(piv, piv)] = Rinv @ Rinv.T
    score = V * (w * resid)[:, None]
    meat = score.T @ score
    return beta, bread @ meat @ bread


def ancova(A, Y, X_sel=None, row_weights=None, conf_level: float = 0.95) -> AteEstimate:
    A, Y, X, w = _prep(A, Y, X_sel, row_weights)
    V = np.column_stack([np.ones(len(A)), A, X])
    beta, cov = _sandwich(V, Y, w)
    if cov is None:
        return _finish("ancova", beta[1], None, conf_level, {FLAG_RANK: True})
    return _finish("ancova", beta[1], cov[1, 1], conf_level)


def anhecova(A, Y, X_sel=None, row_weights=None, conf_level: float = 0.95) -> AteEstimate:
    A, Y, X, w = _prep(A, Y, X_sel, row_weights)
    n, p = X.shape
    xbar = (w @ X) / w.sum() if p else np.zeros(0)
    Xc = X - xbar
    V = np.column_stack([np.ones(n), A, X, A[:, None] * Xc])
    beta, cov = _sandwich(V, Y, w)
    flags = {}
    if cov is None:
        flags[FLAG_RANK] = True
    if p and not flags:
        slopes = []
        for a in (1, 0):
            m = A == a
            b, c = _sandwich(np.column_stack([np.ones(m.sum()), X[m]]), Y[m], w[m])
            if c is None:
                flags[FLAG_RANK] = True
                break
            slopes.append(b[1:])
        if not flags:
            d = slopes[0] - slopes[1]
            S = np.atleast_2d(np.cov(X.T, aweights=w)) if n > 1 else np.zeros((p, p))
            correction = float(d @ S @ d) / _neff(w)
    if flags:
        return _finish("anhecova", beta[1], None, conf_level, flags)
    var = cov[1, 1] + (correction if p else 0.0)
    return _finish("anhecova", beta[1], var, conf_level)


@dataclass
class PotentialMeans:
    labels: tuple
    theta: np.ndarray
    sigma: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "labels": [str(a) for a in self.labels],
            "theta": self.theta.tolist(),
            "sigma": None if self.sigma is None else self.sigma.tolist(),
            "diagnostics": dict(self.diagnostics),
        }


@dataclass
class _ArmFit:
    mu: np.ndarray  # predictions for every row
    converged: bool
    deficient: bool


def _fit_arm(rows, Y, X, link: LinkFamily, w, intercept: bool) -> _ArmFit:
    n = len(Y)
    design = np.column_stack([np.ones(n), X]) if intercept else X.reshape(n, -1)
    fit = irls_fit(design[rows], Y[rows], link, weights=w[rows])
    deficient = fit.rank_deficient or rows.sum() < design.shape[1]
    mu = link.mean(design @ fit.beta)
    return _ArmFit(mu, fit.converged and np.all(np.isfinite(mu)), deficient)


def _aipw_core(labels, Y, designs, links, w, intercept=True):
    """Arm means and their covariance for K arms; ``designs[k]`` holds arm k's covariates."""
    labels = np.asarray(labels)
    arms = list(dict.fromkeys(sorted(labels.tolist())))
    K = len(arms)
    masks = [labels == a for a in arms]
    fits = [_fit_arm(masks[k], Y, designs[k], links[k], w, intercept) for k in range(K)]
    flags = {}
    if any(not f.converged for f in fits):
        flags[FLAG_GLM] = True
    if any(f.deficient for f in fits):
        flags[FLAG_RANK] = True
    W = w.sum()
    theta = np.empty(K)
    for k, (m, f) in enumerate(zip(masks, fits)):
        theta[k] = _wmean(Y[m] - f.mu[m], w[m]) + _wmean(f.mu, w)
    if flags.get(FLAG_GLM) or any(m.sum() < 2 for m in masks):
        if any(m.sum() < 2 for m in masks):
            flags[FLAG_SMALL] = True
        return arms, theta, None, flags

    V = np.empty((K, K))
    for a in range(K):
        ma, mua = masks[a], fits[a].mu
        V[a, a] = (W / w[ma].sum()) * _wcov(Y[ma] - mua[ma], Y[ma] - mua[ma], w[ma]) \
            + 2 * _wcov(Y[ma], mua[ma], w[ma]) - _wcov(mua, mua, w)
        for b in range(a + 1, K):
            mb, mub = masks[b], fits[b].mu
            V[a, b] = V[b, a] = _wcov(Y[ma], mub[ma], w[ma]) + _wcov(Y[mb], mua[mb], w[mb]) \
                - _wcov(mua, mub, w)
    return arms, theta, V / _neff(w), flags


def aipw(A, Y, X_sel_arm1=None, X_sel_arm0=None, link1="identity", link0="identity",
         row_weights=None, conf_level: float = 0.95, intercept: bool = True):
    """AIPW estimate of the ATE plus the arm means and their covariance.

    Returns ``(AteEstimate, PotentialMeans)``; the arm order in
    ``PotentialMeans`` is (control, treated).
    """
    A, Y, X1, w = _prep(A, Y, X_sel_arm1, row_weights)
    X0 = np.zeros((len(A), 0)) if X_sel_arm0 is None else np.asarray(X_sel_arm0, float).reshape(len(A), -1)
    links = [get_link(link0), get_link(link1)]
    arms, theta, sigma, flags = _aipw_core(A, Y, [X0, X1], links, w, intercept)
    pm = PotentialMeans(tuple(arms), theta, sigma, dict(flags))
    tau = theta[1] - theta[0]
    var = None if sigma is None else sigma[1, 1] - 2 * sigma[0, 1] + sigma[0, 0]
    if var is not None and var <= 0:
        flags[FLAG_NEGVAR] = True
        var = None
    return _finish("aipw", tau, var, conf_level, flags), pm


def potential_means_multiarm(labels, Y, designs: dict, links: dict, row_weights=None,
                             conf_level: float = 0.95, intercept: bool = True):
    """Arm means for K >= 2 arms plus every pairwise contrast ``theta_a - theta_b``.

    ``designs`` and ``links`` map each arm label to its covariate matrix
    (all rows) and link.  Returns ``(PotentialMeans, {(a, b): AteEstimate})``.
    """
    labels = np.asarray(labels)
    Y = np.asarray(Y, dtype=float)
    n = len(labels)
    arms = sorted(set(labels.tolist()))
    if len(arms) < 2:
        raise ValueError("need at least two arms")
    w = _weights(row_weights, n)
    mats = [np.zeros((n, 0)) if designs.get(a) is None else np.asarray(designs[a], float).reshape(n, -1)
            for a in arms]
    lk = [get_link(links.get(a, "identity")) for a in arms]
    arms, theta, sigma, flags = _aipw_core(labels, Y, mats, lk, w, intercept)
    pm = PotentialMeans(tuple(arms), theta, sigma, dict(flags))
    contrasts = {}
    for i, a in enumerate(arms):
        for j, b in enumerate(arms):
            var = None if sigma is None else sigma[i, i] - 2 * sigma[i, j] + sigma[j, j]
            f = dict(flags)
            if var is not None and var < 0:
                f[FLAG_NEGVAR] = True
            contrasts[(a, b)] = _finish(f"aipw[{a}-{b}]", theta[i] - theta[j], var, conf_level, f)
    return pm, contrasts


def _fmt(v, digits=6):
    if v is None:
        return "NA"
    return f"{v:.{digits}g}"


def format_table(estimates) -> str:
    rows = [TABLE_COLUMNS] + [
        (e.method, _fmt(e.tau_hat), _fmt(e.se), _fmt(e.ci_low), _fmt(e.ci_high), _fmt(e.p_value))
        for e in estimates
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(TABLE_COLUMNS))]
    return "\n".join(
        "  ".join(c.rjust(wd) if i else c.ljust(wd) for i, (c, wd) in enumerate(zip(r, widths)))
        for r in rows
    )


def format_csv(estimates) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TABLE_COLUMNS)
    for e in estimates:
        wr.writerow([e.method] + [("NA" if v is None else repr(v)) for v in
                                  (e.tau_hat, e.se, e.ci_low, e.ci_high, e.p_value)])
    return buf.getvalue()


def format_json(estimates) -> str:
    return json.dumps([e.to_dict() for e in estimates], indent=2)
