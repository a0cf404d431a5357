"""Monte Carlo experiments: RMSE of IRF estimators and of averaging weights."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from . import __version__
from .averaging import (
    DEFAULT_GUARD,
    A_GRID,
    B_GRID,
    RiskComponents,
    calibrate_flexible,
    direct_weight,
    flexible_weight,
    model_avg_weight,
    oracle_weight,
)
from .bootstrap import plugin_weight
from .dgp import DgpSpec, get_spec, simulate, simulate_batch, true_irf
from .errors import ConfigError, ExperimentFailureError, IrfavgError
from .pipeline import Wiring, estimate_pair, estimate_pair_batch
from .rng import derive_seed
from .var import select_order

ESTIMATORS = ("lp", "var", "oracle", "plugin", "flexible", "direct", "model-avg")
WEIGHT_METHODS = ("plugin", "flexible", "direct", "model-avg")
REPLICATION_FAILURE_BUDGET = 0.01
BLOCK = 8  # replications per parallel task; fixed so output never depends on worker count


@dataclass
class ExperimentSpec:
    """One Monte Carlo design. ``dgp`` is ``{"name": ..., "params": [...]}``
    for a built-in process or ``{"spec": {...}}`` for explicit coefficients."""

    name: str
    dgp: dict
    T: int
    H: int = 10
    R: int = 100
    B: int = 200
    seed: int = 0
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    wiring: dict = field(default_factory=dict)
    R_oracle: int = 2000
    report_horizons: Optional[list] = None
    guard: float = DEFAULT_GUARD

    def __post_init__(self):
        if self.R < 1:
            raise ConfigError("R must be at least 1")
        if self.T < 2:
            raise ConfigError("T must be at least 2")
        if self.H < 0:
            raise ConfigError("H must be non-negative")
        if self.B < 2:
            raise ConfigError("B must be at least 2")
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")
        if self.report_horizons is not None:
            if any(not 0 <= h <= self.H for h in self.report_horizons):
                raise ConfigError("report_horizons must lie in 0..H")

    @property
    def horizons(self) -> list:
        return list(self.report_horizons) if self.report_horizons is not None else list(range(self.H + 1))

    def dgp_spec(self) -> DgpSpec:
        if "spec" in self.dgp:
            return DgpSpec.from_dict(self.dgp["spec"])
        if "name" not in self.dgp:
            raise ConfigError("dgp needs a 'name' or an explicit 'spec'")
        return get_spec(self.dgp["name"], *self.dgp.get("params", []))

    def make_wiring(self) -> Wiring:
        d = dict(self.wiring)
        d["H"] = self.H
        return Wiring.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown experiment keys: {sorted(extra)}")
        missing = {"name", "dgp", "T"} - set(d)
        if missing:
            raise ConfigError(f"experiment config missing keys: {sorted(missing)}")
        return cls(**d)


def load_experiment(path) -> ExperimentSpec:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentSpec.from_dict(d)


@dataclass
class OracleReference:
    weights: np.ndarray
    flags: np.ndarray
    risk: RiskComponents
    truth: np.ndarray


def _grouped_batch(spec: DgpSpec, wiring: Wiring, T: int, seeds: list, p_fixed: Optional[int]):
    """Estimate on fresh samples, batching those that share a lag order."""
    Y, eps = simulate_batch(spec, T, seeds)
    if p_fixed is not None:
        orders = np.full(len(seeds), p_fixed)
    else:
        orders = np.array([select_order(Y[i], wiring.lags, wiring.p_max) for i in range(len(seeds))])
    lp = np.full((len(seeds), wiring.H + 1), np.nan)
    vr = np.full_like(lp, np.nan)
    for p in np.unique(orders):
        m = orders == p
        est = estimate_pair_batch(Y[m], eps[m] if wiring.mode == "shock" else None, wiring, int(p))
        lp[m] = est.theta_lp
        vr[m] = est.theta_var
    return lp, vr


def oracle_reference(exp: ExperimentSpec, R_oracle: Optional[int] = None, chunk: int = 100) -> OracleReference:
    """Oracle weights from risk components simulated under the true process."""
    R_oracle = exp.R_oracle if R_oracle is None else R_oracle
    spec = exp.dgp_spec()
    wiring = exp.make_wiring()
    if wiring.mode == "iv":
        raise ConfigError("Monte Carlo designs support observed-shock or recursive identification")
    truth = true_irf(spec, exp.H).scalar(wiring.response, wiring.impulse)
    p_fixed = None if isinstance(wiring.lags, str) else int(wiring.lags)
    lp_all, var_all = [], []
    with threadpool_limits(1):
        for start in range(0, R_oracle, chunk):
            seeds = [(exp.seed, exp.name, "oracle", i) for i in range(start, min(start + chunk, R_oracle))]
            lp, vr = _grouped_batch(spec, wiring, exp.T, seeds, p_fixed)
            lp_all.append(lp)
            var_all.append(vr)
    L = np.concatenate(lp_all)
    V = np.concatenate(var_all)
    ok = np.all(np.isfinite(L), axis=1) & np.all(np.isfinite(V), axis=1)
    L, V = L[ok], V[ok]
    mL, mV = L.mean(axis=0), V.mean(axis=0)
    n = L.shape[0]
    risk = RiskComponents(np.sum((L - mL) ** 2, axis=0) / n, np.sum((V - mV) ** 2, axis=0) / n,
                          np.sum((L - mL) * (V - mV), axis=0) / n, mL - truth, mV - truth)
    ws = oracle_weight(risk, exp.guard)
    return OracleReference(ws.weights, ws.flags, risk, truth)


def _replicate(exp: ExperimentSpec, spec: DgpSpec, wiring: Wiring, r: int) -> dict:
    panel = simulate(spec, exp.T, (exp.seed, exp.name, r))
    pair = estimate_pair(panel, wiring)
    out = {"lp": pair.theta_lp.values, "var": pair.theta_var.values}
    need_boot = any(e in exp.estimators for e in ("plugin", "flexible", "direct"))
    if need_boot:
        pw = plugin_weight(panel, wiring, exp.B, derive_seed(exp.seed, exp.name, r), pair.p, exp.guard)
        out["w_plugin"] = pw.weights.weights
        d = pw.draws
        if "flexible" in exp.estimators:
            a, b, _ = calibrate_flexible(d.theta_lp, d.theta_var, d.pseudo_truth, A_GRID, B_GRID)
            out["w_flexible"] = flexible_weight(pair.theta_lp, pair.theta_var, a, b).weights
            out["flex_ab"] = np.array([a, b])
        if "direct" in exp.estimators:
            out["w_direct"] = direct_weight(d.theta_lp, d.theta_var, d.pseudo_truth).weights
    out["w_model-avg"] = model_avg_weight(pair.r2_lp, pair.r2_var).weights
    return out


def _run_block(exp: ExperimentSpec, rs: Sequence[int]) -> list:
    spec = exp.dgp_spec()
    wiring = exp.make_wiring()
    res = []
    with threadpool_limits(1):
        for r in rs:
            try:
                res.append((r, _replicate(exp, spec, wiring, r), None))
            except (IrfavgError, np.linalg.LinAlgError, FloatingPointError) as exc:
                res.append((r, None, f"{type(exc).__name__}: {exc}"))
    return res


@dataclass
class RmseTable:
    """RMSE rows keyed by (kind, name, horizon) with Monte Carlo standard errors."""

    rows: list  # (kind, name, horizon, rmse, se)

    def value(self, name: str, horizon: int, kind: str = "estimator") -> float:
        for k, n, h, v, _ in self.rows:
            if k == kind and n == name and h == horizon:
                return v
        raise KeyError((kind, name, horizon))

    def se(self, name: str, horizon: int, kind: str = "estimator") -> float:
        for k, n, h, _, s in self.rows:
            if k == kind and n == name and h == horizon:
                return s
        raise KeyError((kind, name, horizon))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    table: RmseTable
    truth: np.ndarray
    oracle: Optional[OracleReference]
    estimates: dict  # name -> (R_ok, H + 1)
    weights: dict  # method -> (R_ok, H + 1)
    failures: list
    replications: list


def rmse_with_se(err: np.ndarray):
    """Column-wise RMSE and its delta-method standard error."""
    e2 = err * err
    R = e2.shape[0]
    rmse = np.sqrt(e2.mean(axis=0))
    sd = e2.std(axis=0, ddof=1) if R > 1 else np.zeros(e2.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(rmse > 0, sd / (2 * rmse * math.sqrt(R)), 0.0)
    return rmse, se


def run_experiment(exp: ExperimentSpec, threads: int = 1, oracle: Optional[OracleReference] = None) -> ExperimentResult:
    """Run all replications; seeds depend only on (seed, name, replication)."""
    spec = exp.dgp_spec()
    wiring = exp.make_wiring()
    if wiring.mode == "iv":
        raise ConfigError("Monte Carlo designs support observed-shock or recursive identification")
    truth = true_irf(spec, exp.H).scalar(wiring.response, wiring.impulse)
    need_oracle = "oracle" in exp.estimators or any(m in exp.estimators for m in WEIGHT_METHODS)
    if oracle is None and need_oracle:
        oracle = oracle_reference(exp)

    blocks = [list(range(s, min(s + BLOCK, exp.R))) for s in range(0, exp.R, BLOCK)]
    if threads > 1 and len(blocks) > 1:
        parts = Parallel(n_jobs=threads)(delayed(_run_block)(exp, b) for b in blocks)
    else:
        parts = [_run_block(exp, b) for b in blocks]
    results = sorted((x for part in parts for x in part), key=lambda t: t[0])

    failures = [(r, msg) for r, _, msg in results if msg is not None]
    if len(failures) > REPLICATION_FAILURE_BUDGET * exp.R:
        raise ExperimentFailureError(
            f"{len(failures)} of {exp.R} replications failed; first: {failures[0][1]}")
    good = [out for _, out, msg in results if msg is None]
    reps = [r for r, _, msg in results if msg is None]

    est = {"lp": np.array([g["lp"] for g in good]), "var": np.array([g["var"] for g in good])}
    wts = {}
    for m in WEIGHT_METHODS:
        if m in exp.estimators and f"w_{m}" in good[0]:
            wts[m] = np.array([g[f"w_{m}"] for g in good])
            est[m] = wts[m] * est["lp"] + (1 - wts[m]) * est["var"]
    if "oracle" in exp.estimators:
        est["oracle"] = oracle.weights * est["lp"] + (1 - oracle.weights) * est["var"]

    rows = []
    hs = exp.horizons
    for name in [e for e in ESTIMATORS if e in exp.estimators and e in est]:
        rmse, se = rmse_with_se(est[name] - truth)
        rows += [("estimator", name, h, float(rmse[h]), float(se[h])) for h in hs]
    if oracle is not None:
        for m in [m for m in WEIGHT_METHODS if m in wts]:
            rmse, se = rmse_with_se(wts[m] - oracle.weights)
            rows += [("weight", m, h, float(rmse[h]), float(se[h])) for h in hs]
    return ExperimentResult(exp, RmseTable(rows), truth, oracle, est, wts, failures, reps)


TABLE_HEADER = ["kind", "name", "horizon", "rmse", "mc_se"]


def _fmt4(x: float) -> str:
    return f"{x:.4f}"


def emit_tables(table: RmseTable, path, fmt: str = "csv") -> None:
    """Write the RMSE table as CSV or aligned text, 4 decimals."""
    rows = [[k, n, str(h), _fmt4(v), _fmt4(s)] for k, n, h, v, s in table.rows]
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_HEADER)
            w.writerows(rows)
    elif fmt == "text":
        allrows = [TABLE_HEADER] + rows
        widths = [max(len(r[i]) for r in allrows) for i in range(len(TABLE_HEADER))]
        lines = ["  ".join(c.rjust(wd) if i >= 2 else c.ljust(wd) for i, (c, wd) in enumerate(zip(r, widths))).rstrip()
                 for r in allrows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown table format {fmt!r}")


def parse_table(path) -> RmseTable:
    """Inverse of :func:`emit_tables` for either format."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        return RmseTable([])
    if "," in text[0]:
        rows = list(csv.reader(text))[1:]
    else:
        rows = [line.split() for line in text[1:] if line.strip()]
    return RmseTable([(k, n, int(h), float(v), float(s)) for k, n, h, v, s in rows])


def emit_figure_data(series: dict, path, horizons: Sequence[int]) -> None:
    """CSV with a ``horizon`` column followed by one column per series.

    Each series is an array aligned with ``horizons`` or a mapping from
    horizon to value.
    """
    horizons = list(horizons)
    cols = {}
    for name, s in series.items():
        if isinstance(s, dict):
            missing = [h for h in horizons if h not in s]
            if missing:
                raise ValueError(f"series {name!r} is missing horizons {missing}")
            cols[name] = [s[h] for h in horizons]
        else:
            arr = np.asarray(s, dtype=float).reshape(-1)
            if arr.size != len(horizons):
                raise ValueError(f"series {name!r} has {arr.size} values for {len(horizons)} horizons")
            cols[name] = list(arr)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon"] + list(cols))
        for i, h in enumerate(horizons):
            w.writerow([h] + [repr(float(cols[c][i])) for c in cols])


def figure_bundle(res: ExperimentResult) -> dict:
    hs = res.spec.horizons
    out = {"truth": res.truth[hs]}
    for name, arr in res.estimates.items():
        rmse, _ = rmse_with_se(arr - res.truth)
        out[f"rmse_{name}"] = rmse[hs]
    if res.oracle is not None:
        out["weight_oracle"] = res.oracle.weights[hs]
    for m, arr in res.weights.items():
        out[f"weight_{m}"] = arr.mean(axis=0)[hs]
    return out


def write_run(res: ExperimentResult, out_dir, argv_config: Optional[dict] = None) -> list:
    """Write tables, figure data and manifest; returns the written file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_tables(res.table, out / "rmse.csv", "csv")
    emit_tables(res.table, out / "rmse.txt", "text")
    emit_figure_data(figure_bundle(res), out / "figure_data.csv", res.spec.horizons)
    manifest = {
        "command": "montecarlo",
        "version": __version__,
        "experiment": res.spec.to_dict(),
        "seed_scheme": "replication r uses (seed, name, r); bootstrap draw b uses (derive_seed(seed, name, r), 'draw', b)",
        "replications_ok": len(res.replications),
        "failures": [{"replication": r, "error": m} for r, m in res.failures],
        "oracle_weights": None if res.oracle is None else [float(x) for x in res.oracle.weights],
    }
    if argv_config:
        manifest["invocation"] = argv_config
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ["rmse.csv", "rmse.txt", "figure_data.csv", "manifest.json"]
