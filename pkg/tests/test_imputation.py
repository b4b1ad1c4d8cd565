import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rctadjust.dataset import BinaryTrial, DataError
from rctadjust.imputation import (
    ImputationSpec,
    UnsupportedMethodError,
    impute,
    impute_cc,
    impute_chained,
    impute_miss_ind,
    ipw_missing_outcome,
)


def _trial(n=10, p=2, seed=0, y_obs=None, X_obs=None):
    rng = np.random.default_rng(seed)
    A = np.arange(n) % 2
    y_obs = np.ones(n, bool) if y_obs is None else y_obs
    X_obs = np.ones((n, p), bool) if X_obs is None else X_obs
    return BinaryTrial(A, rng.standard_normal(n), y_obs, rng.standard_normal((n, p)), X_obs,
                       [f"x{j + 1}" for j in range(p)])


def test_spec_aliases_and_missforest():
    assert ImputationSpec("mice").method == "chained"
    assert ImputationSpec("missInd").method == "miss_ind"
    with pytest.raises(UnsupportedMethodError, match="missForest"):
        ImputationSpec("missForest")
    with pytest.raises(ValueError):
        ImputationSpec("hotdeck")


def test_cc_examples():
    tr = _trial()
    out = impute_cc(tr)
    assert out.trial.n_rows == 10 and out.dropped_rows.size == 0
    X_obs = np.ones((10, 2), bool)
    X_obs[4, 1] = False
    out = impute_cc(_trial(X_obs=X_obs))
    assert out.trial.n_rows == 9 and out.dropped_rows.tolist() == [4]
    y_obs = np.arange(10) % 2 == 0  # every treated row loses its outcome
    with pytest.raises(DataError, match="arm exhausted: 1"):
        impute_cc(_trial(y_obs=y_obs))


def test_cc_idempotent():
    X_obs = np.random.default_rng(1).random((30, 2)) > 0.2
    once = impute_cc(_trial(30, X_obs=X_obs))
    twice = impute_cc(once.trial)
    np.testing.assert_array_equal(once.trial.X, twice.trial.X)
    assert twice.dropped_rows.size == 0


def test_chained_noop_and_determinism():
    tr = _trial()
    assert impute_chained(tr, seed=1).trial is tr
    X_obs = np.random.default_rng(2).random((40, 3)) > 0.2
    y_obs = np.random.default_rng(3).random(40) > 0.2
    t = _trial(40, 3, y_obs=y_obs, X_obs=X_obs)
    a = impute_chained(t, seed=9)
    b = impute_chained(t, seed=9)
    np.testing.assert_array_equal(a.trial.X, b.trial.X)
    np.testing.assert_array_equal(a.trial.Y, b.trial.Y)
    assert a.trial.is_complete
    np.testing.assert_array_equal(a.trial.X[X_obs], t.X[X_obs])
    np.testing.assert_array_equal(a.trial.Y[y_obs], t.Y[y_obs])


def test_chained_collinear_oracle():
    rng = np.random.default_rng(4)
    n = 30
    x2 = rng.standard_normal(n)
    X = np.column_stack([x2.copy(), x2])
    X_obs = np.ones((n, 2), bool)
    X_obs[7, 0] = False
    y = rng.standard_normal(n)
    tr = BinaryTrial(np.arange(n) % 2, y, np.ones(n, bool), X, X_obs, ["x1", "x2"])
    out = impute_chained(tr, n_cycles=5, seed=0)
    assert abs(out.trial.X[7, 0] - x2[7]) <= 1e-6


def test_chained_binary_column_stays_binary():
    rng = np.random.default_rng(5)
    n = 80
    b = (rng.random(n) < 0.5).astype(float)
    X = np.column_stack([b, rng.standard_normal(n)])
    X_obs = np.ones((n, 2), bool)
    X_obs[:8, 0] = False
    tr = BinaryTrial(np.arange(n) % 2, rng.standard_normal(n), np.ones(n, bool), X, X_obs, ["b", "z"])
    out = impute_chained(tr, seed=1)
    assert set(np.unique(out.trial.X[:, 0])) <= {0.0, 1.0}


def test_ipw_examples():
    tr = _trial()
    out = ipw_missing_outcome(tr)
    assert np.all(out.row_weights == 1) and out.dropped_rows.size == 0

    rng = np.random.default_rng(6)
    y_obs = rng.random(2000) < 0.5
    out = ipw_missing_outcome(_trial(2000, y_obs=y_obs, seed=6))
    assert 1.8 <= out.row_weights.mean() <= 2.2
    assert np.all(out.row_weights >= 1)

    X_obs = np.ones((10, 2), bool)
    X_obs[0, 0] = False
    with pytest.raises(DataError):
        ipw_missing_outcome(_trial(X_obs=X_obs))


def test_ipw_clamps_weights():
    rng = np.random.default_rng(7)
    n = 400
    A = np.arange(n) % 2
    x = rng.standard_normal(n)
    # observation probability drops steeply with x, forcing extreme weights
    y_obs = rng.random(n) < 1 / (1 + np.exp(6 * x))
    tr = BinaryTrial(A, rng.standard_normal(n), y_obs, x[:, None], np.ones((n, 1), bool), ["x"])
    out = ipw_missing_outcome(tr)
    assert out.row_weights.max() <= 100
    assert np.all(out.row_weights >= 1)


def test_miss_ind_examples():
    out = impute_miss_ind(_trial())
    assert out.added_columns == ()
    X_obs = np.ones((10, 2), bool)
    X_obs[[2, 5], 0] = False
    out = impute_miss_ind(_trial(X_obs=X_obs))
    assert out.added_columns == ("x1__miss",)
    t = out.trial
    assert t.covariate_names[-1] == "x1__miss"
    np.testing.assert_array_equal(np.flatnonzero(t.X[:, 2]), [2, 5])
    assert t.X[2, 0] == 0 and t.X[5, 0] == 0
    y_obs = np.ones(10, bool)
    y_obs[3] = False
    with pytest.raises(DataError):
        impute_miss_ind(_trial(y_obs=y_obs))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["cc", "mice", "missInd", "ipw"]))
def test_every_method_completes(seed, method):
    rng = np.random.default_rng(seed)
    n = 50
    X_obs = rng.random((n, 3)) > 0.15
    y_obs = rng.random(n) > 0.15
    if method == "missInd":
        y_obs[:] = True
    if method == "ipw":
        X_obs[:] = True
    tr = _trial(n, 3, seed=seed % 1000, y_obs=y_obs, X_obs=X_obs)
    try:
        out = impute(ImputationSpec(method, seed=1), tr)
    except DataError:
        return
    assert out.trial.is_complete
    assert np.all(out.row_weights > 0) and np.all(np.isfinite(out.row_weights))
