import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rctadjust.estimators import (
    AteEstimate,
    aipw,
    ancova,
    anhecova,
    format_csv,
    format_json,
    format_table,
    potential_means_multiarm,
    simple_estimator,
)


def _data(seed, n=120, p=3, hetero=True):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) * rng.uniform(0.5, 2, p) + rng.uniform(-1, 1, p)
    A = (rng.random(n) < 0.5).astype(int)
    A[:2] = [0, 1]
    b1 = rng.standard_normal(p)
    b0 = b1 + (rng.standard_normal(p) if hetero else 0)
    Y = 1 + 0.5 * A + np.where(A == 1, X @ b1, X @ b0) + rng.standard_normal(n)
    return A, Y, X


def _hc0(V, y):
    bread = np.linalg.inv(V.T @ V)
    e = y - V @ (bread @ V.T @ y)
    return bread @ (V.T * e ** 2) @ V @ bread


def test_simple_hand_example():
    est = simple_estimator([1, 1, 0, 0], [3, 5, 1, 1])
    assert est.tau_hat == pytest.approx(3.0)
    assert est.se == pytest.approx(1.0)
    z = 1.959963984540054
    assert est.ci_low == pytest.approx(3 - z) and est.ci_high == pytest.approx(3 + z)
    assert est.p_value == pytest.approx(2 * (1 - 0.9986501019683699), rel=1e-6)


def test_simple_degenerate_cases():
    est = simple_estimator([1, 0, 1, 0], [2, 2, 2, 2])
    assert est.tau_hat == 0 and est.se == 0
    est = simple_estimator([1, 0, 0, 0], [5, 1, 2, 3])
    assert est.tau_hat == pytest.approx(3.0)
    assert est.se is None and est.ci_low is None and est.p_value is None
    assert est.diagnostics


def test_simple_unit_weights_match_unweighted():
    A, Y, _ = _data(1)
    a = simple_estimator(A, Y)
    b = simple_estimator(A, Y, np.ones(len(A)))
    assert a.tau_hat == pytest.approx(b.tau_hat) and a.se == pytest.approx(b.se)


def test_simple_weighted_effective_n():
    # integer weights with effective-size scaling: arm variance over N_eff
    A = np.array([1, 1, 1, 0, 0, 0])
    Y = np.array([1.0, 2, 4, 0, 1, 1])
    w = np.array([2.0, 1, 1, 1, 1, 2])
    est = simple_estimator(A, Y, w)
    m1 = (2 * 1 + 2 + 4) / 4
    m0 = (0 + 1 + 2) / 4
    assert est.tau_hat == pytest.approx(m1 - m0)

    def arm(y, ww):
        m = np.sum(ww * y) / ww.sum()
        v = np.sum(ww * (y - m) ** 2) / (ww.sum() - np.sum(ww ** 2) / ww.sum())
        return v / (ww.sum() ** 2 / np.sum(ww ** 2))

    var = arm(Y[:3], w[:3]) + arm(Y[3:], w[3:])
    assert est.se == pytest.approx(math.sqrt(var))


def test_ancova_reductions():
    A, Y, X = _data(2)
    s = simple_estimator(A, Y)
    assert ancova(A, Y, None).tau_hat == pytest.approx(s.tau_hat, abs=1e-10)
    assert anhecova(A, Y, np.zeros((len(A), 0))).tau_hat == pytest.approx(s.tau_hat, abs=1e-10)
    # centered covariate orthogonal to A within the sample
    A6 = np.array([1, 1, 1, 0, 0, 0])
    x6 = np.array([1.0, -1, 0, 1, -1, 0])
    Y6 = np.array([3.0, 1, 2, 1, 0, 2])
    assert ancova(A6, Y6, x6[:, None]).tau_hat == pytest.approx(simple_estimator(A6, Y6).tau_hat, abs=1e-12)


def test_ancova_sandwich_matches_hand_hc0():
    A, Y, X = _data(3)
    V = np.column_stack([np.ones(len(A)), A, X])
    est = ancova(A, Y, X)
    assert est.se == pytest.approx(math.sqrt(_hc0(V, Y)[1, 1]), rel=1e-10)


def test_anhecova_variance_has_correction():
    A, Y, X = _data(4)
    n = len(A)
    Xc = X - X.mean(0)
    V = np.column_stack([np.ones(n), A, X, A[:, None] * Xc])
    base = _hc0(V, Y)[1, 1]
    slopes = [np.linalg.lstsq(np.column_stack([np.ones((A == a).sum()), X[A == a]]), Y[A == a], rcond=None)[0][1:]
              for a in (1, 0)]
    d = slopes[0] - slopes[1]
    corr = d @ np.cov(X.T) @ d / n
    est = anhecova(A, Y, X)
    assert est.se ** 2 == pytest.approx(base + corr, rel=1e-9)


def test_anhecova_equal_slopes_no_correction():
    # identical per-arm slopes make the correction vanish
    A = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    x = np.array([0.0, 1, 2, 3, 0, 1, 2, 3])
    e = np.array([0.1, -0.2, 0.2, -0.1, -0.1, 0.2, -0.2, 0.1])
    Y = 2 * x + A + e
    n = len(A)
    Xc = x - x.mean()
    V = np.column_stack([np.ones(n), A, x, A * Xc])
    s1 = np.polyfit(x[A == 1], Y[A == 1], 1)[0]
    s0 = np.polyfit(x[A == 0], Y[A == 0], 1)[0]
    est = anhecova(A, Y, x[:, None])
    expected = _hc0(V, Y)[1, 1] + (s1 - s0) ** 2 * np.var(x, ddof=1) / n
    assert est.se ** 2 == pytest.approx(expected, rel=1e-9)
    Y2 = 2 * x + A
    Y2 = Y2 + np.tile(e[:4], 2)  # same residual pattern in both arms, equal slopes
    s1 = np.polyfit(x[A == 1], Y2[A == 1], 1)[0]
    s0 = np.polyfit(x[A == 0], Y2[A == 0], 1)[0]
    assert s1 == pytest.approx(s0)
    assert anhecova(A, Y2, x[:, None]).se ** 2 == pytest.approx(_hc0(V, Y2)[1, 1], rel=1e-9)


def test_rank_deficiency_gives_na():
    rng = np.random.default_rng(5)
    n = 20
    X = rng.standard_normal((n, n))
    X[:, -1] = X[:, 0]
    A = np.arange(n) % 2
    Y = rng.standard_normal(n)
    for f in (ancova, anhecova):
        est = f(A, Y, X)
        assert math.isfinite(est.tau_hat)
        assert est.se is None and est.diagnostics.get("rank_deficient")


def test_aipw_without_models_is_simple_difference():
    A, Y, _ = _data(6)
    est, pm = aipw(A, Y, None, None, intercept=False)
    d = Y[A == 1].mean() - Y[A == 0].mean()
    assert est.tau_hat == pytest.approx(d, abs=1e-12)


def test_aipw_matches_anhecova():
    for seed in range(10):
        A, Y, X = _data(seed, p=1 + seed % 4)
        a, _ = aipw(A, Y, X, X)
        assert abs(a.tau_hat - anhecova(A, Y, X).tau_hat) <= 1e-8


def test_aipw_sigma_contrast_is_scalar_variance():
    A, Y, X = _data(7)
    est, pm = aipw(A, Y, X[:, :2], X[:, 1:])
    S = pm.sigma
    assert np.allclose(S, S.T)
    assert est.se ** 2 == pytest.approx(S[1, 1] - 2 * S[0, 1] + S[0, 0], rel=1e-12)
    assert pm.labels == (0, 1)
    assert pm.theta[1] - pm.theta[0] == pytest.approx(est.tau_hat)


def test_aipw_variance_hand_moments():
    A, Y, X = _data(8, n=60, p=1)
    est, pm = aipw(A, Y, X, X)
    n = len(A)
    mu = {}
    for a in (0, 1):
        m = A == a
        D = np.column_stack([np.ones(m.sum()), X[m]])
        b = np.linalg.lstsq(D, Y[m], rcond=None)[0]
        mu[a] = b[0] + X[:, 0] * b[1]

    def cov(u, v):
        return np.cov(u, v, ddof=1)[0, 1]

    v = {}
    for a in (0, 1):
        m = A == a
        v[a, a] = n / m.sum() * np.var(Y[m] - mu[a][m], ddof=1) + 2 * cov(Y[m], mu[a][m]) - np.var(mu[a], ddof=1)
    m1, m0 = A == 1, A == 0
    v10 = cov(Y[m1], mu[0][m1]) + cov(Y[m0], mu[1][m0]) - cov(mu[1], mu[0])
    var = (v[1, 1] - 2 * v10 + v[0, 0]) / n
    assert est.se ** 2 == pytest.approx(var, rel=1e-10)


def test_aipw_logit_runs_and_flags():
    rng = np.random.default_rng(9)
    n = 300
    X = rng.standard_normal((n, 2))
    A = np.arange(n) % 2
    Y = (rng.random(n) < 1 / (1 + np.exp(-(X[:, 0] + 0.5 * A)))).astype(float)
    est, pm = aipw(A, Y, X, X, "logit", "logit")
    assert est.se is not None and not est.diagnostics
    assert 0 < pm.theta[0] < 1 and 0 < pm.theta[1] < 1
    # separated treated arm: the fit cannot converge
    Y2 = Y.copy()
    Y2[A == 1] = (X[A == 1, 0] > 0).astype(float)
    est2, _ = aipw(A, Y2, X, X, "logit", "logit")
    assert est2.se is None and est2.diagnostics.get("glm_nonconverged")
    assert math.isfinite(est2.tau_hat)


def test_negative_variance_flag():
    # a small simulated trial where the moment variance estimate comes out negative
    from rctadjust.simulation import DgpSpec, simulate_trial, stream

    spec = DgpSpec("continuous", "linear", 100, 1, "additive")
    A, Y, X, _ = simulate_trial(spec, stream(0, 10))
    est, pm = aipw(A, Y, X[:, :5], X[:, :5])
    S = pm.sigma
    assert S[1, 1] - 2 * S[0, 1] + S[0, 0] < 0
    assert est.se is None and est.p_value is None
    assert est.diagnostics.get("negative_variance")
    assert math.isfinite(est.tau_hat)


def test_multiarm_reduces_to_binary():
    A, Y, X = _data(11)
    est, pm = aipw(A, Y, X[:, :1], X[:, 1:])
    pm2, con = potential_means_multiarm(A, Y, {0: X[:, 1:], 1: X[:, :1]}, {0: "identity", 1: "identity"})
    np.testing.assert_allclose(pm2.theta, pm.theta, atol=1e-12)
    np.testing.assert_allclose(pm2.sigma, pm.sigma, atol=1e-12)
    c = con[(1, 0)]
    assert c.tau_hat == pytest.approx(est.tau_hat) and c.se == pytest.approx(est.se)
    self_c = con[(1, 1)]
    assert self_c.tau_hat == 0 and self_c.se == 0


def test_multiarm_symmetric_arms():
    rng = np.random.default_rng(12)
    n = 6000
    lab = rng.integers(0, 3, n)
    x = rng.standard_normal(n)
    Y = 1 + x + np.where(lab == 0, 0.0, 2.0) + rng.standard_normal(n)
    D = {a: x[:, None] for a in range(3)}
    pm, con = potential_means_multiarm(lab, Y, D, {})
    c = con[(2, 1)]
    assert abs(c.tau_hat) <= 3 * c.se
    assert con[(1, 0)].tau_hat == pytest.approx(2.0, abs=0.15)


def test_no_covariates_all_methods_agree():
    A, Y, _ = _data(13)
    taus = [simple_estimator(A, Y).tau_hat, ancova(A, Y).tau_hat, anhecova(A, Y).tau_hat, aipw(A, Y)[0].tau_hat]
    assert max(taus) - min(taus) <= 1e-9


def test_formatting_renders_na():
    rows = [AteEstimate("simple", 1.5, 0.5, 0.52, 2.48, 0.0027), AteEstimate("ancova", 1.2)]
    txt = format_table(rows)
    lines = txt.splitlines()
    assert lines[0].split() == ["method", "tau", "se", "ci.lwr", "ci.upr", "p"]
    assert lines[2].split()[2:] == ["NA"] * 4
    assert format_csv(rows).splitlines()[2] == "ancova,1.2,NA,NA,NA,NA"
    assert json.loads(format_json(rows))[1]["se"] is None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-1e3, 1e3))
def test_location_invariance(seed, c):
    A, Y, X = _data(seed % 10000, n=60, p=2)
    for f in (lambda y: simple_estimator(A, y), lambda y: ancova(A, y, X),
              lambda y: anhecova(A, y, X), lambda y: aipw(A, y, X, X[:, :1])[0]):
        assert abs(f(Y + c).tau_hat - f(Y).tau_hat) <= 1e-9 * max(1.0, abs(c))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_affine_covariate_invariance(seed):
    A, Y, X = _data(seed % 10000, n=60, p=3)
    rng = np.random.default_rng(seed)
    X2 = X * rng.uniform(0.2, 5, 3) + rng.uniform(-10, 10, 3)
    assert ancova(A, Y, X2).tau_hat == pytest.approx(ancova(A, Y, X).tau_hat, abs=1e-8)
    assert anhecova(A, Y, X2).tau_hat == pytest.approx(anhecova(A, Y, X).tau_hat, abs=1e-8)
    assert aipw(A, Y, X2, X2)[0].tau_hat == pytest.approx(aipw(A, Y, X, X)[0].tau_hat, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_row_permutation_invariance(seed):
    A, Y, X = _data(seed % 10000, n=50, p=2)
    perm = np.random.default_rng(seed).permutation(len(A))
    for f in (simple_estimator, lambda a, y: ancova(a, y, X if a is A else X[perm]),
              lambda a, y: anhecova(a, y, X if a is A else X[perm]),
              lambda a, y: aipw(a, y, X if a is A else X[perm], X if a is A else X[perm])[0]):
        e1, e2 = f(A, Y), f(A[perm], Y[perm])
        if e1.se is not None:
            assert e2.se == pytest.approx(e1.se, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(50, 400), st.integers(1, 10))
def test_anhecova_aipw_fuzz(seed, n, p):
    A, Y, X = _data(seed % 100000, n=n, p=p)
    assert abs(aipw(A, Y, X, X)[0].tau_hat - anhecova(A, Y, X).tau_hat) <= 1e-8
