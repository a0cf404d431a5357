"""Command-line entry point: ``irfavg simulate | estimate | montecarlo``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .averaging import (
    A_GRID,
    B_GRID,
    DEFAULT_GUARD,
    W_GRID,
    calibrate_flexible,
    combine,
    direct_weight,
    flexible_weight,
    model_avg_weight,
)
from .bootstrap import nested_band, plugin_weight, wild_band
from .core import format_number, read_panel_csv, write_panel_csv
from .dgp import builtin_specs, get_spec, load_spec, simulate
from .errors import ConfigError, IdentificationError, IrfavgError
from .montecarlo import ExperimentSpec, load_experiment, run_experiment, write_run
from .pipeline import Wiring, check_identification, estimate_pair
from .rng import derive_seed


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_seed(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required: pass --seed or set 'seed' in the config")
    return int(seed)


def cmd_simulate(args) -> list:
    if args.spec:
        spec = load_spec(args.spec)
    elif args.dgp:
        spec = get_spec(args.dgp, *[float(x) for x in args.params])
    else:
        raise ConfigError(f"name a DGP ({', '.join(sorted(builtin_specs()))}) or pass --spec")
    if args.seed is None:
        raise ConfigError("a seed is required: pass --seed")
    panel = simulate(spec, args.T, int(args.seed))
    if panel.n > 1:
        panel.shock = panel.shock[:, args.shock - 1] if args.shock else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(panel, out)
    side = out.with_name(out.name + ".manifest.json")
    _dump(side, {
        "command": "simulate",
        "version": __version__,
        "seed": int(args.seed),
        "T": args.T,
        "shock": args.shock,
        "dgp": spec.to_dict(),
        "builtin": None if args.spec else {"name": args.dgp, "params": [float(x) for x in args.params]},
    })
    return [str(out), str(side)]


def _infer_mode(panel, wcfg: dict) -> str:
    if "mode" in wcfg:
        return wcfg["mode"]
    if panel.shock is not None:
        return "shock"
    if panel.instrument is not None:
        return "iv"
    if wcfg.get("order") is not None:
        return "recursive"
    raise IdentificationError(
        "no identification: input has no __shock__ or __instrument__ column and the config gives no recursive order")


def cmd_estimate(args) -> list:
    cfg = _load_json(args.config) if args.config else {}
    known = {"wiring", "bootstrap", "seed", "coverage", "band", "B_inner", "guard", "a_grid", "b_grid", "w_grid"}
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"unknown estimate config keys: {sorted(extra)}")
    panel = read_panel_csv(args.input)
    wcfg = dict(cfg.get("wiring", {}))
    wcfg["mode"] = _infer_mode(panel, wcfg)
    if args.horizons is not None:
        wcfg["H"] = args.horizons
    wiring = Wiring.from_dict(wcfg)
    check_identification(panel, wiring)
    seed = _require_seed(args, cfg)
    B = args.bootstrap if args.bootstrap is not None else int(cfg.get("bootstrap", 200))
    coverage = args.coverage if args.coverage is not None else float(cfg.get("coverage", 0.68))
    band_kind = args.band if args.band is not None else cfg.get("band", "wild")
    B_inner = args.inner if args.inner is not None else int(cfg.get("B_inner", B))
    guard = float(cfg.get("guard", DEFAULT_GUARD))
    a_grid = np.asarray(cfg.get("a_grid", A_GRID), dtype=float)
    b_grid = np.asarray(cfg.get("b_grid", B_GRID), dtype=float)
    w_grid = np.asarray(cfg.get("w_grid", W_GRID), dtype=float)
    if band_kind not in ("wild", "nested", "none"):
        raise ConfigError(f"band must be wild, nested or none, not {band_kind!r}")

    pair = estimate_pair(panel, wiring)
    pw = plugin_weight(panel, wiring, B, derive_seed(seed, "plugin"), pair.p, guard)
    d = pw.draws
    a, b, _ = calibrate_flexible(d.theta_lp, d.theta_var, d.pseudo_truth, a_grid, b_grid)
    w_flex = flexible_weight(pair.theta_lp, pair.theta_var, a, b)
    w_dir = direct_weight(d.theta_lp, d.theta_var, d.pseudo_truth, w_grid)
    w_mod = model_avg_weight(pair.r2_lp, pair.r2_var)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = {
        "lp": pair.theta_lp.values,
        "var": pair.theta_var.values,
        "avg_plugin": combine(pair.theta_lp, pair.theta_var, pw.weights).values,
        "avg_flexible": combine(pair.theta_lp, pair.theta_var, w_flex).values,
        "avg_modelavg": combine(pair.theta_lp, pair.theta_var, w_mod).values,
    }
    _write_columns(out / "irf.csv", cols)
    _write_columns(out / "weights.csv", {
        "plugin": pw.weights.weights,
        "flexible": w_flex.weights,
        "direct": w_dir.weights,
        "modelavg": w_mod.weights,
        "plugin_safeguard": pw.weights.flags.astype(int),
        "modelavg_safeguard": w_mod.flags.astype(int),
    })
    pw.risk.to_csv(out / "risk.csv")
    files = ["irf.csv", "weights.csv", "risk.csv"]
    if band_kind == "wild":
        band = wild_band(panel, wiring, B, coverage, derive_seed(seed, "band"), pw.weights, pair)
    elif band_kind == "nested":
        band = nested_band(panel, wiring, B, B_inner, coverage, derive_seed(seed, "band"),
                           weights=pw.weights, point=pair, threads=args.threads)
    if band_kind != "none":
        band.to_csv(out / "bands.csv")
        files.append("bands.csv")
    manifest = {
        "command": "estimate",
        "version": __version__,
        "input": {"path": Path(args.input).name, "sha256": hashlib.sha256(Path(args.input).read_bytes()).hexdigest()},
        "seed": seed,
        "wiring": wiring.to_dict(),
        "bootstrap": B,
        "band": band_kind,
        "B_inner": B_inner if band_kind == "nested" else None,
        "coverage": coverage,
        "guard": guard,
        "lag_order": pair.p,
        "sieve_order": pw.sieve.p,
        "flexible": {"a": a, "b": b},
        "failed_draws": pw.draws.failed,
        "grids": {"a": a_grid.tolist(), "b": b_grid.tolist(), "w": w_grid.tolist()},
    }
    _dump(out / "manifest.json", manifest)
    return files + ["manifest.json"]


def _write_columns(path: Path, cols: dict) -> None:
    H = len(next(iter(cols.values())))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon"] + list(cols))
        for h in range(H):
            w.writerow([h] + [format_number(float(c[h])) for c in cols.values()])


def cmd_montecarlo(args) -> list:
    exp = load_experiment(args.config)
    d = exp.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.bootstrap is not None:
        d["B"] = args.bootstrap
    if args.horizons is not None:
        d["H"] = args.horizons
        if d.get("report_horizons") is not None:
            d["report_horizons"] = [h for h in d["report_horizons"] if h <= args.horizons]
    if args.replications is not None:
        d["R"] = args.replications
    exp = ExperimentSpec.from_dict(d)
    t0 = time.perf_counter()
    res = run_experiment(exp, threads=args.threads)
    files = write_run(res, args.out)
    wall = time.perf_counter() - t0
    print(f"wall time {wall:.1f}s", file=sys.stderr)
    if args.timing:
        _dump(Path(args.out) / "timing.json", {"wall_seconds": round(wall, 3), "threads": args.threads})
        files.append("timing.json")
    return files


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irfavg", description="LP/VAR impulse responses with estimator averaging.")
    ap.add_argument("--version", action="version", version=f"irfavg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a built-in or user-supplied process to CSV")
    s.add_argument("dgp", nargs="?", help=f"one of: {', '.join(sorted(builtin_specs()))}")
    s.add_argument("params", nargs="*", help="process parameters, e.g. rho alpha for arma")
    s.add_argument("--spec", help="JSON file with explicit coefficients")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--shock", type=int, help="multivariate: write structural shock K (1-based) as __shock__")
    s.add_argument("--out", default="panel.csv")

    e = sub.add_parser("estimate", help="estimate LP/VAR responses, averaging weights and bands")
    e.add_argument("input")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--bootstrap", type=int, metavar="B")
    e.add_argument("--horizons", type=int, metavar="H")
    e.add_argument("--coverage", type=float)
    e.add_argument("--band", choices=["wild", "nested", "none"])
    e.add_argument("--inner", type=int, metavar="B_INNER", help="inner draws for the nested band")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", default="out")

    m = sub.add_parser("montecarlo", help="run a Monte Carlo experiment from a JSON config")
    m.add_argument("config")
    m.add_argument("--seed", type=int)
    m.add_argument("--bootstrap", type=int, metavar="B")
    m.add_argument("--horizons", type=int, metavar="H")
    m.add_argument("--replications", type=int, metavar="R")
    m.add_argument("--threads", type=int, default=1)
    m.add_argument("--timing", action="store_true", help="also write timing.json (not reproducible)")
    m.add_argument("--out", default="run")
    return ap


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "montecarlo": cmd_montecarlo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("irfavg: config: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(1):
            files = COMMANDS[args.command](args)
    except IrfavgError as exc:
        print(f"irfavg: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"irfavg: io: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"irfavg: invalid-input: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
