from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irfavg.averaging import (
    A_GRID,
    B_GRID,
    FLEX_RATIO_CAP,
    RiskComponents,
    WeightSchedule,
    calibrate_flexible,
    combine,
    combined_mse,
    direct_weight,
    flexible_weight,
    model_avg_weight,
    oracle_weight,
    oracle_weight_k,
    oracle_weight_raw,
)
from irfavg.core import IrfEstimate
from irfavg.errors import HorizonMismatchError


def _psd_risk(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(2, 2))
    S = L @ L.T
    b = rng.normal(size=2)
    return RiskComponents(S[0, 0], S[1, 1], S[0, 1], b[0], b[1])


def test_combined_mse_examples():
    r = RiskComponents.from_adf(3.0, 2.0, 0.5)
    assert combined_mse(1.0, r) == pytest.approx(3.0)
    assert combined_mse(0.0, r) == pytest.approx(2.0)
    ones = RiskComponents.from_adf(1.0, 1.0, 1.0)
    for w in (0.0, 0.3, 0.77, 1.0):
        assert combined_mse(w, ones) == pytest.approx(1.0)


def test_oracle_weight_examples():
    w = oracle_weight(RiskComponents.from_adf(2.0, 2.0, 0.5)).weights[0]
    assert w == pytest.approx(0.5)
    assert oracle_weight(RiskComponents(1.0, 2.0, 0.0, 0.0, 0.0)).weights[0] == pytest.approx(2 / 3)
    r = RiskComponents.from_adf(4.0, 1.0, 0.5)
    w = oracle_weight(r).weights[0]
    assert w == pytest.approx(0.125)
    grid = np.linspace(0, 1, 10001)
    assert abs(grid[np.argmin(combined_mse(grid, r))] - w) <= 1e-4


def test_oracle_safeguard():
    ws = oracle_weight(RiskComponents.from_adf([1.0, 1.0], [1.0, 2.0], [1.0, 0.0]))
    assert ws.weights[0] == 0.5 and ws.flags[0]
    assert not ws.flags[1]
    w, flag = oracle_weight_raw(0.0, 0.0, 0.0)
    assert w == 0.5 and flag


def test_risk_components_mismatch():
    with pytest.raises(HorizonMismatchError):
        RiskComponents([1.0, 2.0], [1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])


def test_risk_derived_quantities():
    r = RiskComponents(1.0, 2.0, 0.3, 0.5, -1.0)
    assert r.a == pytest.approx(1.25)
    assert r.d == pytest.approx(3.0)
    assert r.f == pytest.approx(-0.2)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_oracle_optimal_on_grid(seed):
    r = _psd_risk(seed)
    assert r.C ** 2 <= r.V_L * r.V_V + 1e-12
    assert r.a * r.d >= r.f ** 2 - 1e-12
    w = oracle_weight(r).weights[0]
    best = combined_mse(w, r)
    grid = np.linspace(0, 1, 1001)
    assert np.all(best <= combined_mse(grid, r) + 1e-10)
    assert best <= min(r.a, r.d) + 1e-12


def test_k_estimator_examples():
    w, flag = oracle_weight_k(np.eye(3))
    np.testing.assert_allclose(w, [1 / 3] * 3)
    assert not flag
    w, _ = oracle_weight_k(np.diag([1.0, 2.0]))
    np.testing.assert_allclose(w, [2 / 3, 1 / 3])
    w, flag = oracle_weight_k(np.ones((2, 2)))
    assert flag
    np.testing.assert_allclose(w, [0.5, 0.5])


def test_k_estimator_constrained_grid():
    rng = np.random.default_rng(1)
    L = rng.normal(size=(4, 4))
    G = L @ L.T + 0.1 * np.eye(4)
    w, _ = oracle_weight_k(G)
    assert w.sum() == pytest.approx(1.0)
    best = w @ G @ w
    vals = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.02), 10)
    W = np.array(list(itertools.product(vals, repeat=3)))
    W = np.column_stack([W, 1 - W.sum(axis=1)])
    obj = np.einsum("ij,jk,ik->i", W, G, W)
    assert best <= obj.min() + 1e-12


def test_k2_matches_two_estimator_form():
    for seed in range(1000):
        r = _psd_risk(seed)
        G = np.array([[r.a[0], r.f[0]], [r.f[0], r.d[0]]])
        wk, flag = oracle_weight_k(G)
        w2, flag2 = oracle_weight_raw(r.a, r.d, r.f)
        if flag or flag2[0]:
            continue
        assert abs(wk[0] - w2[0]) <= 1e-10 * max(1.0, abs(w2[0]))


def test_flexible_examples():
    lp = IrfEstimate([1.0, 0.8, 0.4], "lp")
    var = IrfEstimate([1.0, 0.5, 0.3], "var")
    np.testing.assert_allclose(flexible_weight(lp, var, 0.6, 0.0).weights, 0.6)
    np.testing.assert_allclose(flexible_weight(lp, lp, 0.6, 8.0).weights, 0.6)
    np.testing.assert_allclose(flexible_weight(lp, var, 0.0, 4.0).weights, 0.0)
    w = flexible_weight(lp, var, 0.8, 2.0).weights
    r = (0.8 - 0.5) / 1.3
    assert w[1] == pytest.approx(0.8 / (1 + 2 * r * r))
    cancel = flexible_weight(IrfEstimate([1.0], "lp"), IrfEstimate([-1.0], "var"), 0.5, 1.0)
    assert cancel.weights[0] == pytest.approx(0.5 / (1 + FLEX_RATIO_CAP))


def test_calibrate_lp_dominant():
    rng = np.random.default_rng(2)
    truth = np.array([1.0, 0.5, 0.25])
    L = np.tile(truth, (50, 1))
    V = truth + 0.3 + rng.normal(scale=0.1, size=(50, 3))
    a, b, _ = calibrate_flexible(L, V, truth)
    assert a == A_GRID.max() and b == 0.0


def test_calibrate_flat_objective_tie_break():
    rng = np.random.default_rng(3)
    L = rng.normal(size=(40, 4))
    a, b, _ = calibrate_flexible(L, L.copy(), np.zeros(4))
    assert (a, b) == (A_GRID.min(), B_GRID.min())


def test_calibrate_equal_uncorrelated_risks():
    rng = np.random.default_rng(4)
    truth = np.full(3, 10.0)
    L = truth + rng.normal(size=(20_000, 3))
    V = truth + rng.normal(size=(20_000, 3))
    a, b, _ = calibrate_flexible(L, V, truth)
    assert a == pytest.approx(0.5) and b == 0.0


def test_calibrate_needs_two_draws():
    with pytest.raises(ValueError):
        calibrate_flexible(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(2))


def test_direct_weight_examples():
    rng = np.random.default_rng(5)
    truth = np.array([1.0, 0.5])
    L = truth + rng.normal(size=(100, 2))
    assert np.all(direct_weight(L, np.tile(truth, (100, 1)), truth).weights == 0.0)
    V = truth + rng.normal(size=(100_000, 2))
    L = truth + rng.normal(size=(100_000, 2))
    w = direct_weight(L, V, truth).weights
    assert np.all(np.abs(w - 0.5) <= 0.01 + 1e-12)


def test_direct_weight_matches_closed_form():
    rng = np.random.default_rng(6)
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    bias = np.array([0.4, -0.2])
    E = rng.multivariate_normal(bias, S, size=400_000)
    truth = np.array([0.0])
    w = direct_weight(E[:, :1], E[:, 1:], truth).weights[0]
    r = RiskComponents(S[0, 0], S[1, 1], S[0, 1], bias[0], bias[1])
    assert abs(w - oracle_weight(r).weights[0]) <= 0.01 + 1e-12


def test_model_avg_examples():
    assert model_avg_weight([0.4], 0.4).weights[0] == pytest.approx(0.5)
    assert model_avg_weight([0.3], 0.6).weights[0] == pytest.approx(1 / 3)
    assert model_avg_weight([0.0], 0.6).weights[0] == 0.0
    ws = model_avg_weight([0.0, 0.2], 0.0)
    assert ws.weights[0] == 0.5 and ws.flags[0] and not ws.flags[1]
    with pytest.raises(ValueError):
        model_avg_weight([1.2], 0.5)


def test_combine_examples():
    lp = IrfEstimate([1.0, 0.5], "lp")
    var = IrfEstimate([1.0, 0.3], "var")
    np.testing.assert_array_equal(combine(lp, var, WeightSchedule([1, 1], "fixed")).values, lp.values)
    np.testing.assert_array_equal(combine(lp, var, WeightSchedule([0, 0], "fixed")).values, var.values)
    np.testing.assert_allclose(combine(lp, var, WeightSchedule([0.5, 0.5], "fixed")).values, [1.0, 0.4])
    with pytest.raises(HorizonMismatchError):
        combine(lp, IrfEstimate([1.0, 0.3, 0.1], "var"), WeightSchedule([0.5, 0.5], "fixed"))
    with pytest.raises(HorizonMismatchError):
        combine(lp, var, WeightSchedule([0.5], "fixed"))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(-10, 10))
def test_combine_is_homogeneous(lp, var, w, c):
    ws = WeightSchedule(w, "fixed")
    base = combine(IrfEstimate(lp, "lp"), IrfEstimate(var, "var"), ws).values
    scaled = combine(IrfEstimate(np.multiply(c, lp), "lp"), IrfEstimate(np.multiply(c, var), "var"), ws).values
    np.testing.assert_allclose(scaled, c * base, atol=1e-9)


def test_weight_schedule_bounds_and_csv(tmp_path):
    with pytest.raises(ValueError):
        WeightSchedule([0.2, 1.1], "plugin")
    ws = WeightSchedule([0.2, 0.5], "plugin", [False, True])
    ws.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "horizon,method,weight,safeguard"
    assert lines[2].endswith(",1")
    RiskComponents.from_adf([1.0], [2.0], [0.1]).to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "horizon,V_L,V_V,C,b_L,b_V,a,d,f"
