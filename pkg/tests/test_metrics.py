import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stc_dropout.metrics import evaluate, write_metrics_csv


def agg(ms):
    return next(m for m in ms if m.horizon == "all")


def test_perfect_forecast():
    y = np.arange(1, 13, dtype=float).reshape(2, 3, 2)
    for m in evaluate(y, y):
        assert m.mae == m.rmse == m.mape == 0.0


def test_single_pair():
    m = agg(evaluate([[[3.0]]], [[[2.0]]], epsilon=1e-5))
    assert m.mae == pytest.approx(1.0, abs=1e-9)
    assert m.rmse == pytest.approx(1.0, abs=1e-9)
    assert m.mape == pytest.approx(100 / (2 + 1e-5), abs=1e-9)
    assert m.mape == pytest.approx(50.0, abs=1e-3)


def test_two_residuals():
    m = agg(evaluate([[[1.0, -3.0]]], [[[0.0, 0.0]]]))
    assert m.mae == pytest.approx(2.0, abs=1e-9)
    assert m.rmse == pytest.approx(math.sqrt(5), abs=1e-9)
    assert m.count == 2


def test_per_horizon_and_cumulative(rng):
    p, y = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 3, 4))
    ms = evaluate(p, y, horizons=[1, 3])
    assert [m.horizon for m in ms] == ["1", "3", "all"]
    assert ms[1].mae == pytest.approx(np.mean(np.abs(p[:, 2] - y[:, 2])))
    cum = evaluate(p, y, horizons=[2], cumulative=True)[0]
    assert cum.rmse == pytest.approx(np.sqrt(np.mean((p[:, :2] - y[:, :2]) ** 2)))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_rmse_dominates_mae_and_permutation(w, s, n, seed):
    rng = np.random.default_rng(seed)
    y = rng.uniform(1, 10, (w, s, n))
    p = y + rng.normal(size=(w, s, n))
    m = agg(evaluate(p, y))
    assert m.rmse >= m.mae >= 0 and m.mape >= 0
    perm = rng.permutation(w)
    m2 = agg(evaluate(p[perm], y[perm]))
    assert m2.mae == pytest.approx(m.mae, rel=1e-12)
    assert m2.rmse == pytest.approx(m.rmse, rel=1e-12)


def test_scaling(rng):
    y = rng.uniform(1, 10, (4, 2, 3))
    p = y + rng.normal(size=y.shape)
    c = 3.5
    a = agg(evaluate(p, y, epsilon=1e-5))
    b = agg(evaluate(c * p, c * y, epsilon=c * 1e-5))
    assert b.mae == pytest.approx(c * a.mae, rel=1e-12)
    assert b.rmse == pytest.approx(c * a.rmse, rel=1e-12)
    assert b.mape == pytest.approx(a.mape, rel=1e-12)


def test_csv(tmp_path, rng):
    write_metrics_csv(evaluate(rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2))), tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "horizon,mae,mape,rmse,count"
    assert len(lines) == 4
