"""Acceptance suite: one ``criterion N: PASS/FAIL`` line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from irfavg.averaging import RiskComponents, combined_mse, oracle_weight_k, oracle_weight_raw
from irfavg.bootstrap import (
    BootstrapDraws,
    bootstrap_risk,
    estimate_omega,
    nested_band,
    plugin_variance,
    plugin_weight,
    wild_band,
)
from irfavg.cli import main
from irfavg.dgp import arma, simulate
from irfavg.montecarlo import ExperimentSpec, load_experiment, run_experiment
from irfavg.pipeline import Wiring, estimate_pair

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _random_adf(rng, n):
    L = rng.normal(size=(n, 2, 2))
    S = L @ np.swapaxes(L, 1, 2)
    b = rng.normal(size=(n, 2))
    return RiskComponents(S[:, 0, 0], S[:, 1, 1], S[:, 0, 1], b[:, 0], b[:, 1])


def _run(name, **over):
    d = load_experiment(CONFIGS / f"{name}.json").to_dict()
    d.update(over)
    exp = ExperimentSpec.from_dict(d)
    t0 = time.perf_counter()
    res = run_experiment(exp)
    return res, time.perf_counter() - t0


def test_criterion_1_oracle_algebra(report):
    t0 = time.perf_counter()
    risk = _random_adf(np.random.default_rng(1), 10_000)
    w, flag = oracle_weight_raw(risk.a, risk.d, risk.f)
    w = np.clip(w, 0, 1)
    grid = np.linspace(0.0, 1.0, 10_001)
    best = np.empty(10_000)
    for s in range(0, 10_000, 500):
        part = risk.at(slice(s, s + 500))
        mse = combined_mse(grid[:, None], part)
        best[s:s + 500] = grid[np.argmin(mse, axis=0)]
    gap = np.abs(best - w)[~flag].max()
    dt = time.perf_counter() - t0
    ok = gap <= 1e-4 + 1e-12 and dt < 5
    assert report(1, ok, f"max |closed form - grid| = {gap:.2e} (step 1e-4), runtime {dt:.2f}s")


def test_criterion_2_k_estimator(report):
    risk = _random_adf(np.random.default_rng(2), 1000)
    w2, flag = oracle_weight_raw(risk.a, risk.d, risk.f)
    worst = 0.0
    for i in range(1000):
        G = np.array([[risk.a[i], risk.f[i]], [risk.f[i], risk.d[i]]])
        wk, fk = oracle_weight_k(G)
        assert not fk and not flag[i]
        worst = max(worst, abs(wk[0] - w2[i]))
    assert report(2, worst <= 1e-10, f"max |K=2 - two-estimator| = {worst:.2e}")


def _table2_check(res, tol):
    lp, var = res.table.value("lp", 1), res.table.value("var", 1)
    elp, evar = lp / 0.0958 - 1, var / 0.2972 - 1
    ok = abs(elp) <= tol and abs(evar) <= tol
    return ok, f"LP h=1 {lp:.4f} (vs 0.0958, {elp:+.1%}), VAR h=1 {var:.4f} (vs 0.2972, {evar:+.1%})"


@pytest.mark.slow
def test_criterion_3_table2(report):
    desk, t_desk = _run("table2_desk")
    ok_d, msg_d = _table2_check(desk, 0.25)
    full, t_full = _run("table2_full")
    ok_f, msg_f = _table2_check(full, 0.12)
    ok = ok_d and t_desk <= 600 and ok_f
    assert report(3, ok, f"desk R=200: {msg_d}, {t_desk:.0f}s | full R=1000 B=500: {msg_f}, {t_full:.0f}s")


@pytest.mark.slow
def test_criterion_4_dominance(report):
    worst = []
    ok = True
    for name in ("arma_r5_a5_T240", "arma_r5_a9_T240", "arma_r9_a5_T240", "arma_r9_a9_T240"):
        res, _ = _run(name, estimators=["lp", "var", "oracle"])
        for h in range(1, 11):
            o = res.table.value("oracle", h)
            best = min(res.table.value("lp", h), res.table.value("var", h))
            se = res.table.se("oracle", h)
            slack = (o - best) / se if se > 0 else 0.0
            worst.append((slack, name, h))
            ok &= o <= best + 2 * se
    s, name, h = max(worst)
    assert report(4, ok, f"largest (oracle - min(LP,VAR)) / MC se = {s:+.2f} at {name} h={h} (limit +2)")


@pytest.mark.slow
def test_criterion_5_weight_convergence(report):
    vals = []
    for T in (200, 400, 800):
        exp = ExperimentSpec(name="weightconv", dgp={"name": "arma", "params": [0.5, 0.5]}, T=T, H=6, R=300,
                             B=500, seed=11, estimators=["lp", "var", "plugin"], wiring={"mode": "recursive", "lags": 1},
                             report_horizons=[1])
        vals.append(run_experiment(exp).table.value("plugin", 1, "weight"))
    ok = vals[0] >= vals[1] >= vals[2] and vals[2] <= 0.01
    assert report(5, ok, "plug-in weight RMSE h=1 at T=200/400/800: " + " / ".join(f"{v:.4f}" for v in vals))


@pytest.mark.slow
def test_criterion_6_multivariate(report):
    res, dt = _run("svar4_desk")
    pl, ma = res.table.value("plugin", 0), res.table.value("model-avg", 0)
    rel = pl / 0.0126 - 1
    ok = pl <= ma and abs(rel) <= 0.30 and dt <= 1800
    assert report(6, ok, f"plug-in {pl:.4f} (vs 0.0126, {rel:+.1%}), model-avg {ma:.4f}, runtime {dt:.0f}s on 1 core")


def test_criterion_7_plugin_variance(report):
    rng = np.random.default_rng(7)
    L = rng.normal(size=(200, 5))
    V = 0.4 * L + rng.normal(size=(200, 5))
    d = BootstrapDraws(L, V, np.zeros(5))
    om = estimate_omega(d, 240)
    r = bootstrap_risk(d)
    ident = max(np.abs(om.matrices[:, 0, 0] - 240 * r.V_L).max(), np.abs(om.matrices[:, 1, 1] - 240 * r.V_V).max(),
                np.abs(om.matrices[:, 0, 1] - 240 * r.C).max())
    ends = all(plugin_variance(1.0, om.at(h)) == om.at(h)[0, 0] and plugin_variance(0.0, om.at(h)) == om.at(h)[1, 1]
               for h in range(5))
    rel = ident / np.abs(om.matrices).max()
    ok = ends and rel <= 1e-12
    assert report(7, ok, f"endpoints exact: {ends}; Omega vs T x covariance max relative gap {rel:.1e}")


@pytest.mark.slow
def test_criterion_8_normality(report):
    spec, T = arma(0.5, 0.0), 2000
    w = Wiring(H=1, mode="recursive", lags=1)
    z = []
    for r in range(1000):
        panel = simulate(spec, T, (8, "normality", r))
        pe = estimate_pair(panel, w)
        pw = plugin_weight(panel, w, 200, 10_000 + r, pe.p)
        wh = pw.weights.weights[1]
        v = plugin_variance(wh, estimate_omega(pw.draws, T).at(1))
        th = wh * pe.theta_lp.values[1] + (1 - wh) * pe.theta_var.values[1]
        z.append(np.sqrt(T) * (th - 0.5) / np.sqrt(v))
    z = np.array(z)
    m, v = z.mean(), z.var(ddof=1)
    ok = abs(m) <= 0.1 and 0.8 <= v <= 1.25
    assert report(8, ok, f"standardized mean {m:+.3f}, variance {v:.3f} over 1000 reps")


@pytest.mark.slow
def test_criterion_9_wild_coverage(report):
    w = Wiring(H=1, mode="recursive", lags=1)
    hits = []
    for r in range(300):
        panel = simulate(arma(0.5, 0.0), 240, (9, "coverage", r))
        band = wild_band(panel, w, 200, 0.68, 20_000 + r)
        hits.append(band.lower[1] <= 0.5 <= band.upper[1])
    cov = float(np.mean(hits))
    assert report(9, 0.60 <= cov <= 0.76, f"68% band coverage of theta_1 = {cov:.3f} over 300 reps")


def test_criterion_10_determinism(report, tmp_path):
    runs = {}
    for threads in ("1", "2", "4"):
        d = tmp_path / f"t{threads}"
        rc = [
            main(["simulate", "svar4", "--T", "300", "--seed", "5", "--shock", "1", "--out", str(d / "sim.csv")]),
            main(["montecarlo", str(CONFIGS / "table2_desk.json"), "--replications", "20", "--bootstrap", "50",
                  "--threads", threads, "--out", str(d / "mc")]),
            main(["estimate", str(d / "sim.csv"), "--seed", "3", "--bootstrap", "40", "--band", "nested", "--inner", "15",
                  "--horizons", "6", "--threads", threads, "--out", str(d / "est")]),
        ]
        assert rc == [0, 0, 0]
        runs[threads] = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
    same = all(runs[t] == runs["1"] for t in runs)
    assert report(10, same, f"{len(runs['1'])} output files byte-identical across --threads 1/2/4")


@pytest.mark.slow
def test_criterion_11_nested_band(report):
    panel = simulate(arma(0.5, 0.5), 240, 11)
    w = Wiring(H=10, mode="recursive", lags=1)
    t0 = time.perf_counter()
    band = nested_band(panel, w, 100, 100, 0.68, 11)
    dt = time.perf_counter() - t0
    contains = bool(np.all((band.lower <= band.center) & (band.center <= band.upper)))
    ok = contains and dt <= 1200
    assert report(11, ok, f"B_outer=100 B_inner=100 in {dt:.1f}s on 1 core; point estimate inside band at all "
                          f"horizons: {contains}")
