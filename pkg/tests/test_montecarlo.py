from __future__ import annotations

import json

import numpy as np
import pytest

from irfavg import montecarlo
from irfavg.dgp import arma, true_irf
from irfavg.errors import ConfigError, ExperimentFailureError, IrfavgError
from irfavg.montecarlo import (
    ExperimentSpec,
    RmseTable,
    emit_figure_data,
    emit_tables,
    load_experiment,
    oracle_reference,
    parse_table,
    run_experiment,
    write_run,
)

UNI_WIRING = {"mode": "recursive", "lags": 1}


def _exp(**kw):
    d = dict(name="t", dgp={"name": "arma", "params": [0.5, 0.5]}, T=240, H=6, R=4, B=20, seed=1,
             wiring=UNI_WIRING, R_oracle=200)
    d.update(kw)
    return ExperimentSpec.from_dict(d)


def test_spec_validation():
    with pytest.raises(ConfigError):
        _exp(R=0)
    with pytest.raises(ConfigError):
        _exp(estimators=[])
    with pytest.raises(ConfigError):
        _exp(estimators=["lp", "nope"])
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"name": "x", "dgp": {"name": "arma"}, "T": 10, "bogus": 1})


def test_single_replication_rmse_is_abs_error():
    exp = _exp(R=1, estimators=["lp", "var"])
    res = run_experiment(exp)
    truth = true_irf(arma(0.5, 0.5), 6).scalar()
    for name in ("lp", "var"):
        err = np.abs(res.estimates[name][0] - truth)
        for h in range(7):
            assert res.table.value(name, h) == pytest.approx(err[h], abs=1e-15)
            assert res.table.se(name, h) == 0.0


def test_rmse_nonnegative_and_weights_rows():
    res = run_experiment(_exp(estimators=["lp", "var", "oracle", "plugin", "model-avg"]))
    assert all(v >= 0 for _, _, _, v, _ in res.table.rows)
    kinds = {(k, n) for k, n, *_ in res.table.rows}
    assert ("weight", "plugin") in kinds and ("weight", "model-avg") in kinds
    assert len(res.table.rows) == 5 * 7 + 2 * 7


def test_table_roundtrip_and_counts(tmp_path):
    table = RmseTable([("estimator", "lp", h, 0.1 * h + 1e-5, 0.01) for h in range(3)]
                      + [("weight", "plugin", h, 0.123456, 0.0) for h in range(3)])
    for fmt, fn in (("csv", "t.csv"), ("text", "t.txt")):
        emit_tables(table, tmp_path / fn, fmt)
        back = parse_table(tmp_path / fn)
        assert len(back.rows) == 6
        for (k, n, h, v, s), (k2, n2, h2, v2, s2) in zip(table.rows, back.rows):
            assert (k, n, h) == (k2, n2, h2)
            assert v2 == pytest.approx(round(v, 4)) and s2 == pytest.approx(round(s, 4))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
    emit_tables(RmseTable([]), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "kind,name,horizon,rmse,mc_se\n"


def test_figure_data(tmp_path):
    hs = list(range(1, 11))
    emit_figure_data({"a": np.arange(10.0), "b": np.ones(10)}, tmp_path / "f.csv", hs)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 11
    assert all(len(l.split(",")) == 3 for l in lines)
    with pytest.raises(ValueError, match="'b'"):
        emit_figure_data({"a": {h: 0.0 for h in hs}, "b": {h: 0.0 for h in hs[:-1]}}, tmp_path / "g.csv", hs)


def test_figure_truth_column_passes_through(tmp_path):
    res = run_experiment(_exp(R=2, estimators=["lp", "var"]))
    write_run(res, tmp_path)
    import csv

    rows = list(csv.DictReader((tmp_path / "figure_data.csv").open()))
    truth = true_irf(arma(0.5, 0.5), 6).scalar()
    assert [float(r["truth"]) for r in rows] == list(truth)


def test_oracle_stable_when_doubling_samples():
    exp = _exp(H=10, R_oracle=2000)
    a = oracle_reference(exp, 2000)
    b = oracle_reference(exp, 4000)
    assert np.all(np.abs(a.weights - b.weights) < 0.02)
    # near one at h=1, then falling with the horizon
    assert a.weights[1] > 0.9
    assert a.weights[10] < a.weights[1] - 0.3


def test_white_noise_oracle_safeguard():
    exp = _exp(dgp={"name": "arma", "params": [0.0, 0.0]}, H=4, R_oracle=400)
    ref = oracle_reference(exp)
    # both estimators equal one exactly on impact, so risks coincide at zero
    assert ref.flags[0] and ref.weights[0] == 0.5
    assert np.all((ref.weights >= 0) & (ref.weights <= 1))


def test_failure_budget(monkeypatch):
    orig = montecarlo._replicate

    def flaky(exp, spec, wiring, r):
        if r in fail:
            raise IrfavgError(f"synthetic failure {r}")
        return orig(exp, spec, wiring, r)

    monkeypatch.setattr(montecarlo, "_replicate", flaky)
    fail = {3}
    res = run_experiment(_exp(R=100, estimators=["lp", "var"]))
    assert [r for r, _ in res.failures] == [3]
    assert len(res.replications) == 99
    fail = {3, 50}
    with pytest.raises(ExperimentFailureError, match="2 of 100"):
        run_experiment(_exp(R=100, estimators=["lp", "var"]))


def test_rerun_bitwise_identical_across_workers(tmp_path):
    exp = _exp(R=10, estimators=["lp", "var", "oracle", "plugin", "flexible", "direct", "model-avg"])
    a = run_experiment(exp, threads=1)
    b = run_experiment(exp, threads=2)
    write_run(a, tmp_path / "a")
    write_run(b, tmp_path / "b")
    for f in ("rmse.csv", "rmse.txt", "figure_data.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    for k in a.estimates:
        assert a.estimates[k].tobytes() == b.estimates[k].tobytes()


def test_load_experiment(tmp_path):
    p = tmp_path / "e.json"
    p.write_text(json.dumps(_exp().to_dict()))
    assert load_experiment(p) == _exp()
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_experiment(p)
