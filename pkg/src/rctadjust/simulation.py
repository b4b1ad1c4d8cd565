"""Monte Carlo laboratory for covariate-adjusted ATE estimation.

Data generation follows a fixed design: five outcome-related covariates
``X`` and fifty noise covariates ``V``, a continuous or binary outcome with a
linear or nonlinear individual treatment effect, and 1:1 Bernoulli
assignment.  Each replication draws from its own PCG64 stream seeded through
``numpy.random.SeedSequence([master_seed, r])``, so replications are
reproducible one by one and can run in any order or process.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .dataset import BinaryTrial
from .estimators import aipw, ancova, anhecova, simple_estimator
from .glm import ols_fit
from .selection import SelectionSpec, select

BETA0 = np.ones(5)
BETA1 = np.array([2.0, 2.0, 3.0, 3.0, 3.0])
C_CONTINUOUS = (8.15, 1.0)
C_BINARY = (10.0, 1.0)
RHO_X12 = 0.8
N_NOISE = 50
ESTIMATORS = ("simple", "ancova", "anhecova", "aipw")


def stream(master_seed: int, r: int) -> np.random.Generator:
    """Independent generator for replication ``r``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(r)])))


@dataclass(frozen=True)
class DgpSpec:
    outcome: str = "continuous"
    delta_form: str = "linear"
    n: int = 500
    seed: int = 4399
    linear_delta_reading: str = "as_written"

    def __post_init__(self):
        if self.outcome not in ("continuous", "binary"):
            raise ValueError("outcome must be continuous or binary")
        if self.delta_form not in ("linear", "nonlinear"):
            raise ValueError("delta_form must be linear or nonlinear")
        if self.linear_delta_reading not in ("as_written", "additive"):
            raise ValueError("linear_delta_reading must be as_written or additive")
        if self.n < 4:
            raise ValueError("n must be >= 4")

    @property
    def constants(self) -> tuple[float, float]:
        return C_CONTINUOUS if self.outcome == "continuous" else C_BINARY


@lru_cache(maxsize=None)
def noise_covariance() -> np.ndarray:
    """Column correlation matrix of ``ramp + 2 I`` (ramp rows 0.10, 0.11, ..., 0.59)."""
    ramp = np.repeat((0.10 + 0.01 * np.arange(N_NOISE))[:, None], N_NOISE, axis=1)
    B = ramp + 2.0 * np.eye(N_NOISE)
    S = np.corrcoef(B, rowvar=False)
    np.fill_diagonal(S, 1.0)
    return S


@lru_cache(maxsize=None)
def _noise_chol() -> np.ndarray:
    S = noise_covariance()
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(S + 1e-10 * np.eye(N_NOISE))


def gen_x(n: int, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(np.array([[1.0, RHO_X12], [RHO_X12, 1.0]]))
    x12 = rng.standard_normal((n, 2)) @ L.T
    x3 = rng.standard_normal(n)
    # Student t(10) as a normal over the root of a scaled chi-square
    x4 = rng.standard_normal(n) / np.sqrt(rng.chisquare(10, n) / 10)
    x5 = (rng.random((n, 10)) < 0.2).sum(axis=1) - 2.0
    return np.column_stack([x12, x3, x4, x5])


def gen_covariates(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    X = gen_x(n, rng)
    V = 1.0 + rng.standard_normal((n, N_NOISE)) @ _noise_chol().T
    return X, V


def treatment_effect(X: np.ndarray, spec: DgpSpec) -> np.ndarray:
    c1, c2 = spec.constants
    if spec.delta_form == "linear":
        if spec.linear_delta_reading == "additive":
            return c1 + X @ BETA1
        return c1 * (X @ BETA1)
    W = np.column_stack([X[:, 0] ** 2, np.sin(X[:, 1] ** 2), X[:, 2] * X[:, 3],
                         X[:, 3] * X[:, 4], X[:, 4] ** 2])
    return c2 * (W @ BETA1)


def true_means(X: np.ndarray, spec: DgpSpec, delta=None) -> tuple[np.ndarray, np.ndarray]:
    """``(E[Y(0)|X], E[Y(1)|X])`` under the design."""
    delta = treatment_effect(X, spec) if delta is None else delta
    lin = 20.0 * (X @ BETA0)
    if spec.outcome == "continuous":
        return 50.0 + lin, 50.0 + lin + delta
    return special.expit(lin), special.expit(lin + 3.0 + delta)


def gen_potential_outcomes(X: np.ndarray, spec: DgpSpec, rng: np.random.Generator,
                           delta=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(Y(0), Y(1))``.  ``delta`` overrides the treatment-effect function."""
    m0, m1 = true_means(X, spec, delta)
    n = X.shape[0]
    if spec.outcome == "continuous":
        eps = rng.standard_normal(n)
        return m0 + eps, m1 + eps
    u = rng.random((n, 2))
    return (u[:, 0] < m0).astype(float), (u[:, 1] < m1).astype(float)


@dataclass
class OracleResult:
    tau: float
    mc_se: float
    per_rep: list


def true_ate_oracle(spec: DgpSpec, n_big: int = 10 ** 6, reps: int = 20,
                    seed: int | None = None) -> OracleResult:
    """Super-population ATE: grand mean of ``Y(1) - Y(0)`` over ``reps`` large draws."""
    seed = spec.seed if seed is None else seed
    means = []
    for r in range(reps):
        rng = stream(seed, 10 ** 9 + r)
        X = gen_x(n_big, rng)
        y0, y1 = gen_potential_outcomes(X, spec, rng)
        means.append(float(np.mean(y1 - y0)))
    means = np.array(means)
    se = float(means.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return OracleResult(float(means.mean()), se, means.tolist())


@dataclass(frozen=True)
class MethodConfig:
    """One pipeline: a selection strategy feeding one estimator."""

    selection: SelectionSpec
    estimator: str
    link1: str = "identity"
    link0: str = "identity"
    label: str = ""
    columns: tuple | None = None  # candidate covariates; None means all of them

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.estimator == "simple":
            return "simple"
        return f"{selection_label(self.selection)}+{self.estimator}"


def selection_label(spec: SelectionSpec) -> str:
    if spec.method == "corr_k":
        return f"corr_k({spec.k})"
    if spec.method == "corr_xi":
        return f"corr_xi({spec.xi:g})"
    if spec.method == "pre_test":
        return f"pre_test({spec.alpha:g})"
    return spec.method


DEFAULT_SELECTIONS = (
    SelectionSpec("none"),
    SelectionSpec("lasso"),
    SelectionSpec("adaptive_lasso"),
    SelectionSpec("corr_k", k=1),
    SelectionSpec("corr_k", k=3),
    SelectionSpec("corr_k", k=10),
    SelectionSpec("corr_xi", xi=0.10),
    SelectionSpec("corr_xi", xi=0.25),
    SelectionSpec("pre_test", alpha=0.05),
    SelectionSpec("pre_test", alpha=0.10),
)


def standard_methods(outcome: str, selections=DEFAULT_SELECTIONS) -> list[MethodConfig]:
    link = "identity" if outcome == "continuous" else "logit"
    methods = [MethodConfig(SelectionSpec("none"), "simple")]
    for sel in selections:
        for est in ("ancova", "anhecova", "aipw"):
            lk = link if est == "aipw" else "identity"
            methods.append(MethodConfig(sel, est, lk, lk))
    return methods


def restrict(trial: BinaryTrial, columns) -> BinaryTrial:
    if columns is None:
        return trial
    cols = list(columns)
    return BinaryTrial.complete(trial.A, trial.Y, trial.X[:, cols],
                                [trial.covariate_names[j] for j in cols])


def run_method(method: MethodConfig, trial: BinaryTrial, selection=None):
    """Apply one pipeline to a complete trial; returns an AteEstimate.

    ``selection`` indexes the columns of the restricted trial when
    ``method.columns`` is set.
    """
    trial = restrict(trial, method.columns)
    A, Y, X = trial.A, trial.Y, trial.X
    if method.estimator == "simple":
        return simple_estimator(A, Y)
    sel = selection if selection is not None else select(method.selection, trial)
    if method.estimator == "ancova":
        return ancova(A, Y, X[:, sel.pooled])
    if method.estimator == "anhecova":
        return anhecova(A, Y, X[:, sel.pooled])
    if method.estimator == "aipw":
        est, _ = aipw(A, Y, X[:, sel.per_arm[1]], X[:, sel.per_arm[0]], method.link1, method.link0)
        return est
    raise ValueError(f"unknown estimator {method.estimator!r}")


def simulate_trial(spec: DgpSpec, rng: np.random.Generator, n: int | None = None):
    """One observed trial from the design, plus the unobserved pieces."""
    n = spec.n if n is None else n
    X, V = gen_covariates(n, rng)
    y0, y1 = gen_potential_outcomes(X, spec, rng)
    A = (rng.random(n) < 0.5).astype(np.int64)
    Y = np.where(A == 1, y1, y0)
    names = [f"X{j + 1}" for j in range(5)] + [f"V{j + 1}" for j in range(N_NOISE)]
    return A, Y, np.column_stack([X, V]), names


def _replicate(args):
    spec, methods, master_seed, r, tau, conf_level = args
    rng = stream(master_seed, r)
    fold_seed = int(rng.integers(0, 2 ** 31 - 1))
    A, Y, Xall, names = simulate_trial(spec, rng)
    out = []
    try:
        trial = BinaryTrial.complete(A, Y, Xall, names)
    except Exception:
        return [(float("nan"), None, False, False) for _ in methods]
    cache = {}
    for m in methods:
        try:
            sel = None
            if m.estimator != "simple":
                key = (m.selection, m.columns)
                if key not in cache:
                    ss = m.selection
                    s = SelectionSpec(ss.method, ss.k, ss.xi, ss.alpha, ss.family, fold_seed,
                                      ss.n_folds)
                    cache[key] = select(s, restrict(trial, m.columns))
                sel = cache[key]
            est = run_method(m, trial, sel)
            covered = bool(est.se is not None and est.ci_low <= tau <= est.ci_high)
            rejected = bool(est.p_value is not None and est.p_value <= 1 - conf_level)
            se = None if est.se is None else float(est.se)
            out.append((float(est.tau_hat), se, covered, rejected))
        except Exception:
            out.append((float("nan"), None, False, False))
    return out


@dataclass
class MethodSummary:
    name: str
    tau_hat: list
    se: list
    bias: list
    cp: float
    power: float
    emp_var: float
    na_rate: float

    @property
    def emp_sd(self) -> float:
        return math.sqrt(self.emp_var) if math.isfinite(self.emp_var) else float("nan")


@dataclass
class SimulationReport:
    spec: DgpSpec
    tau: float
    M: int
    seed: int
    methods: list[MethodSummary] = field(default_factory=list)

    def __getitem__(self, name: str) -> MethodSummary:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        doc = {
            "spec": asdict(self.spec),
            "tau": self.tau,
            "M": self.M,
            "seed": self.seed,
            "methods": [
                {k: ([clean(x) for x in v] if isinstance(v, list) else clean(v))
                 for k, v in asdict(m).items()}
                for m in self.methods
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "bias_mean", "bias_median", "emp_sd", "cp", "power", "na_rate"])
        for m in self.methods:
            b = np.array(m.bias, dtype=float)
            b = b[np.isfinite(b)]
            w.writerow([m.name,
                        repr(float(b.mean())) if b.size else "NA",
                        repr(float(np.median(b))) if b.size else "NA",
                        repr(m.emp_sd) if math.isfinite(m.emp_sd) else "NA",
                        repr(m.cp), repr(m.power), repr(m.na_rate)])
        return buf.getvalue()

    def replications_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "method", "tau_hat", "se"])
        for m in self.methods:
            for r, (t, s) in enumerate(zip(m.tau_hat, m.se)):
                w.writerow([r, m.name, "NA" if not math.isfinite(t) else repr(t),
                            "NA" if s is None else repr(s)])
        return buf.getvalue()


def run_monte_carlo(spec: DgpSpec, methods: list[MethodConfig], M: int, master_seed: int,
                    tau: float, workers: int = 1, conf_level: float = 0.95) -> SimulationReport:
    """Replicate the full pipeline ``M`` times and summarize bias, CP% and Power%.

    A replication whose estimator fails, or whose SE is unavailable, counts
    as neither covering nor rejecting; it is tallied in the NA rate.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    jobs = [(spec, list(methods), master_seed, r, tau, conf_level) for r in range(M)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, M // (4 * workers))))
    else:
        results = [_replicate(j) for j in jobs]

    report = SimulationReport(spec, float(tau), M, int(master_seed))
    for k, m in enumerate(methods):
        taus = [res[k][0] for res in results]
        ses = [res[k][1] for res in results]
        cov = sum(res[k][2] for res in results)
        rej = sum(res[k][3] for res in results)
        arr = np.array(taus, dtype=float)
        ok = np.isfinite(arr)
        emp_var = float(arr[ok].var(ddof=1)) if ok.sum() > 1 else float("nan")
        na = sum(1 for s in ses if s is None)
        report.methods.append(MethodSummary(
            m.name, [float(t) for t in taus], ses, [float(t - tau) for t in taus],
            100.0 * cov / M, 100.0 * rej / M, emp_var, 100.0 * na / M,
        ))
    return report


def empirical_variance_gap(report: SimulationReport, a: str, b: str, n: int):
    """``n * (Var[a] - Var[b])`` over replications, with its Monte Carlo SE."""
    ta = np.array(report[a].tau_hat)
    tb = np.array(report[b].tau_hat)
    ok = np.isfinite(ta) & np.isfinite(tb)
    ta, tb = ta[ok], tb[ok]
    M = ta.size
    d = (ta - ta.mean()) ** 2 - (tb - tb.mean()) ** 2
    gap = n * float(d.sum() / (M - 1))
    se = n * float(d.std(ddof=1) / np.sqrt(M)) * M / (M - 1)
    return gap, se


def check_theorem1_condition2(fit_means, true_means_) -> tuple[float, float]:
    """Fractions of rows where the working-model mean has the sign of the true
    conditional mean, and where it is at most twice its magnitude."""
    g = np.asarray(fit_means, dtype=float)
    m = np.asarray(true_means_, dtype=float)
    if g.shape != m.shape:
        raise ValueError("vectors must be aligned")
    sign = float(np.mean(np.sign(g) == np.sign(m)))
    bound = float(np.mean(np.abs(g) <= 2.0 * np.abs(m)))
    return sign, bound


def logistic_bias_bound(g):
    """Largest local bias ``g(1-g)/|1-2g|`` a logistic working model may carry."""
    g = np.asarray(g, dtype=float)
    if np.any((g <= 0) | (g >= 1)):
        raise ValueError("g must lie in (0, 1)")
    with np.errstate(divide="ignore"):
        b = np.where(g == 0.5, np.inf, g * (1 - g) / np.abs(1 - 2 * g))
    return float(b) if b.ndim == 0 else b


@dataclass
class GapResult:
    gap: float
    mc_se: float
    two_term: float
    two_term_se: float


def variance_gap_oracle(spec: DgpSpec, models, n_mc: int = 10 ** 6,
                        rng: np.random.Generator | None = None, pi: float = 0.5) -> GapResult:
    """Asymptotic ``V_simple - V_aipw`` for working-model limits ``models = (g0, g1)``.

    Each ``g_a`` maps an ``(n, 5)`` covariate matrix to predictions.  With
    ``m_a`` the true conditional means and ``c(u, v)`` a covariance,

        gap = (1-pi)/pi * [2c(m1,g1) - c(g1,g1)] + pi/(1-pi) * [2c(m0,g0) - c(g0,g0)]
              + 2 [c(m1,g0) + c(g1,m0) - c(g1,g0)].

    ``two_term`` is the uncentered form without the cross-arm term,
    ``(1-pi)/pi E[g1(2m1-g1)] + pi/(1-pi) E[g0(2m0-g0)]``; it agrees with
    ``gap`` only when the centered cross-arm term vanishes.
    """
    rng = stream(spec.seed, 2 ** 40) if rng is None else rng
    X = gen_x(n_mc, rng)
    m0, m1 = true_means(X, spec)
    g0 = np.asarray(models[0](X), dtype=float)
    g1 = np.asarray(models[1](X), dtype=float)
    k1, k0 = (1 - pi) / pi, pi / (1 - pi)
    c = lambda u: u - u.mean()  # noqa: E731
    m0c, m1c, g0c, g1c = c(m0), c(m1), c(g0), c(g1)
    f = (k1 * (2 * m1c * g1c - g1c ** 2) + k0 * (2 * m0c * g0c - g0c ** 2)
         + 2 * (m1c * g0c + g1c * m0c - g1c * g0c))
    t = k1 * g1 * (2 * m1 - g1) + k0 * g0 * (2 * m0 - g0)
    root = np.sqrt(n_mc)
    return GapResult(float(f.mean()), float(f.std(ddof=1) / root),
                     float(t.mean()), float(t.std(ddof=1) / root))


def linear_limits(spec: DgpSpec, n_fit: int = 200_000, seed: int = 7):
    """Per-arm least-squares fits of Y(a) on (1, X) from a large fresh sample,
    returned as prediction functions ``(g0, g1)``."""
    rng = stream(seed, 2 ** 41)
    X = gen_x(n_fit, rng)
    y0, y1 = gen_potential_outcomes(X, spec, rng)
    D = np.column_stack([np.ones(n_fit), X])
    b0 = ols_fit(D, y0).beta
    b1 = ols_fit(D, y1).beta
    return (lambda Z: b0[0] + Z @ b0[1:]), (lambda Z: b1[0] + Z @ b1[1:])
