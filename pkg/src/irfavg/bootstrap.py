"""AR-sieve and wild bootstraps for averaging weights, variances and bands.

Each bootstrap draw ``b`` uses its own Philox stream keyed on the caller's
seed and ``b``, so results do not depend on how draws are batched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .averaging import (
    DEFAULT_GUARD,
    RiskComponents,
    WeightSchedule,
    oracle_weight,
)
from .core import TimeSeriesPanel, format_number
from .dgp import recurse
from .errors import BootstrapFailureError, DegenerateCovarianceError, IrfavgError
from .pipeline import BatchEstimate, PairEstimate, Wiring, estimate_pair, estimate_pair_batch, identify
from .rng import generator
from .var import VarModel, fit_var, select_order, var_irf

FAILURE_BUDGET = 0.05
SIEVE_BURN_IN = 200
_CHUNK_ELEMS = 4_000_000


@dataclass
class SieveModel:
    """Fitted sieve with centred residuals and the auxiliary rows paired with them."""

    model: VarModel
    residuals: np.ndarray  # (N, n), centred
    shocks: Optional[np.ndarray] = None  # (N, k)
    instrument: Optional[np.ndarray] = None  # (N,)
    criterion: str = "bic"
    p_max: int = 0

    @property
    def p(self) -> int:
        return self.model.p

    @property
    def n(self) -> int:
        return self.model.n


def sieve_fit(panel: TimeSeriesPanel, criterion: str = "bic", p_max: Optional[int] = None) -> SieveModel:
    """Fit the AR/VAR sieve by information criterion and centre its residuals.

    Recorded shocks and the instrument (if any) are kept row-aligned with the
    residuals so they can be resampled jointly.
    """
    if p_max is None:
        p_max = Wiring(mode="recursive").sieve_order_cap(panel.T, panel.n)
    model = fit_var(panel, criterion, p_max)
    resid = model.residuals - model.residuals.mean(axis=0)
    p = model.p
    shocks = panel.shock_matrix[p:].copy() if panel.shock is not None else None
    z = panel.instrument[p:].copy() if panel.instrument is not None else None
    return SieveModel(model, resid, shocks, z, criterion, p_max)


def _padded(sieve: SieveModel) -> TimeSeriesPanel:
    # Stand-in panel whose first p rows are placeholders; identification only
    # reads rows p.. which line up with the sieve residuals.
    p, n = sieve.p, sieve.n
    N = sieve.residuals.shape[0]
    pad = lambda a: None if a is None else np.concatenate([np.zeros((p,) + a.shape[1:]), a])  # noqa: E731
    z = None
    if sieve.instrument is not None:
        z = np.concatenate([np.full(p, np.nan), sieve.instrument])
    return TimeSeriesPanel(np.zeros((N + p, n)), shock=pad(sieve.shocks), instrument=z)


def sieve_pseudo_truth(sieve: SieveModel, wiring: Wiring, H: Optional[int] = None) -> np.ndarray:
    """Impulse response implied by the fitted sieve under the wiring's identification."""
    H = wiring.H if H is None else H
    model = replace(sieve.model, residuals=sieve.residuals,
                    sigma=sieve.residuals.T @ sieve.residuals / sieve.residuals.shape[0])
    ident = identify(model, _padded(sieve), wiring)
    return var_irf(model, ident, H, wiring.response).values


@dataclass
class Resampled:
    Y: np.ndarray  # (B, T, n)
    shocks: Optional[np.ndarray]  # (B, T, k)
    instrument: Optional[np.ndarray]  # (B, T)

    def aux(self, mode: str):
        if mode == "shock":
            return self.shocks
        if mode == "iv":
            return self.instrument
        return None


def _draw_keys(seed, keys, b):
    return (int(seed),) + tuple(keys) + (int(b),)


def sieve_resample(sieve: SieveModel, T: int, B: int, seed: int, keys=("draw",), start: int = 0,
                   burn_in: int = SIEVE_BURN_IN) -> Resampled:
    """Draws ``start..start+B-1``: i.i.d. residual rows, zero start-up, burn-in dropped."""
    N = sieve.residuals.shape[0]
    L = T + burn_in
    idx = np.empty((B, L), dtype=np.int64)
    for i in range(B):
        idx[i] = generator(*_draw_keys(seed, keys, start + i)).integers(0, N, size=L)
    innov = sieve.residuals[idx]
    Y = recurse(sieve.model.coefs, innov)[:, burn_in:]
    shocks = sieve.shocks[idx[:, burn_in:]] if sieve.shocks is not None else None
    z = sieve.instrument[idx[:, burn_in:]] if sieve.instrument is not None else None
    return Resampled(Y, shocks, z)


@dataclass
class BootstrapDraws:
    """Kept bootstrap estimates; ``draw_ids`` indexes the seed ledger."""

    theta_lp: np.ndarray  # (B, H + 1)
    theta_var: np.ndarray
    pseudo_truth: np.ndarray
    draw_ids: np.ndarray = None
    failed: list = field(default_factory=list)
    seed: int = 0
    keys: tuple = ("draw",)
    r2_lp: Optional[np.ndarray] = None
    r2_var: Optional[np.ndarray] = None

    def __post_init__(self):
        self.theta_lp = np.asarray(self.theta_lp, dtype=float)
        self.theta_var = np.asarray(self.theta_var, dtype=float)
        self.pseudo_truth = np.asarray(self.pseudo_truth, dtype=float)
        if self.theta_lp.shape != self.theta_var.shape or self.theta_lp.ndim != 2:
            raise ValueError("draw arrays must be (B, H + 1) and aligned")
        if self.draw_ids is None:
            self.draw_ids = np.arange(self.theta_lp.shape[0])

    @property
    def B(self) -> int:
        return self.theta_lp.shape[0]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "horizon", "theta_lp", "theta_var"])
            for i, b in enumerate(self.draw_ids):
                for h in range(self.theta_lp.shape[1]):
                    w.writerow([int(b), h, format_number(self.theta_lp[i, h]), format_number(self.theta_var[i, h])])


def bootstrap_risk(draws: BootstrapDraws) -> RiskComponents:
    """Variances, covariance (divisor B) and biases against the pseudo-truth."""
    if draws.B < 2:
        raise ValueError("need at least two bootstrap draws")
    L, V = draws.theta_lp, draws.theta_var
    mL, mV = L.mean(axis=0), V.mean(axis=0)
    dL, dV = L - mL, V - mV
    B = draws.B
    return RiskComponents(
        V_L=np.sum(dL * dL, axis=0) / B,
        V_V=np.sum(dV * dV, axis=0) / B,
        C=np.sum(dL * dV, axis=0) / B,
        b_L=mL - draws.pseudo_truth,
        b_V=mV - draws.pseudo_truth,
    )


def _chunk(B: int, T: int, n: int, p: int) -> int:
    k = 3 + n + n * p
    return int(max(1, min(B, _CHUNK_ELEMS // max(T * k, 1))))


def _run_draws(make, B: int, chunk: int, estimate) -> tuple[BatchEstimate, np.ndarray]:
    parts = []
    for start in range(0, B, chunk):
        size = min(chunk, B - start)
        parts.append(estimate(make(start, size)))
    est = BatchEstimate(*[np.concatenate([getattr(p, f) for p in parts]) for f in
                          ("theta_lp", "theta_var", "r2_lp", "r2_var", "ok")])
    return est, np.nonzero(~est.ok)[0]


def _check_failures(failed, B, what="bootstrap"):
    if len(failed) > FAILURE_BUDGET * B or B - len(failed) < 2:
        raise BootstrapFailureError(f"{len(failed)} of {B} {what} draws failed (budget {FAILURE_BUDGET:.0%})")


def lag_order(panel: TimeSeriesPanel, wiring: Wiring) -> int:
    if isinstance(wiring.lags, str):
        return select_order(panel, wiring.lags, wiring.p_max)
    return int(wiring.lags)


def sieve_draws(panel: TimeSeriesPanel, wiring: Wiring, B: int, seed: int, p: Optional[int] = None,
                keys=("draw",), sieve: Optional[SieveModel] = None) -> tuple[BootstrapDraws, SieveModel]:
    """Sieve-bootstrap LP/VAR estimates with the estimator lag order held at ``p``."""
    if B < 2:
        raise ValueError("B must be at least 2")
    if sieve is None:
        sieve = sieve_fit(panel, wiring.sieve_criterion, wiring.sieve_order_cap(panel.T, panel.n))
    truth = sieve_pseudo_truth(sieve, wiring)
    p = lag_order(panel, wiring) if p is None else p
    T = panel.T

    def make(start, size):
        return sieve_resample(sieve, T, size, seed, keys, start)

    def est(rs):
        return estimate_pair_batch(rs.Y, rs.aux(wiring.mode), wiring, p)

    batch, failed = _run_draws(make, B, _chunk(B, T, panel.n, p), est)
    _check_failures(failed, B)
    keep = batch.ok
    draws = BootstrapDraws(batch.theta_lp[keep], batch.theta_var[keep], truth, np.nonzero(keep)[0],
                           failed.tolist(), seed, tuple(keys), batch.r2_lp[keep], batch.r2_var[keep])
    return draws, sieve


@dataclass
class PluginResult:
    weights: WeightSchedule
    risk: RiskComponents
    draws: BootstrapDraws
    sieve: SieveModel


def plugin_weight(panel: TimeSeriesPanel, wiring: Wiring, B: int, seed: int, p: Optional[int] = None,
                  guard: float = DEFAULT_GUARD, keys=("draw",)) -> PluginResult:
    """Sieve-bootstrap plug-in weights, jointly over horizons ``0..H``."""
    draws, sieve = sieve_draws(panel, wiring, B, seed, p, keys)
    risk = bootstrap_risk(draws)
    return PluginResult(oracle_weight(risk, guard, "plugin"), risk, draws, sieve)


@dataclass
class OmegaHat:
    matrices: np.ndarray  # (H + 1, 2, 2)

    def at(self, h: int) -> np.ndarray:
        return self.matrices[h]


def estimate_omega(draws: BootstrapDraws, T: int, center: Optional[np.ndarray] = None) -> OmegaHat:
    """``B^{-1} sum Z Z'`` with ``Z = sqrt(T) (theta*_LP - c_LP, theta*_VAR - c_VAR)``.

    The centre defaults to the bootstrap mean. Pass the original-sample
    estimates as ``center`` (shape (2, H + 1)) for the uncentred variant.
    """
    if draws.B < 2:
        raise ValueError("need at least two bootstrap draws")
    L, V = draws.theta_lp, draws.theta_var
    if center is None:
        cL, cV = L.mean(axis=0), V.mean(axis=0)
    else:
        cL, cV = np.asarray(center[0], dtype=float), np.asarray(center[1], dtype=float)
    Z = np.stack([L - cL, V - cV], axis=-1)  # (B, H+1, 2)
    om = T * np.einsum("bhi,bhj->hij", Z, Z) / draws.B
    return OmegaHat(om)


def plugin_variance(w, omega) -> float:
    """``w^2 O11 + (1 - w)^2 O22 + 2 w (1 - w) O12``."""
    O = np.asarray(omega.matrices if isinstance(omega, OmegaHat) else omega, dtype=float)
    if O.shape != (2, 2):
        raise ValueError("omega must be 2 x 2")
    if abs(O[0, 1] - O[1, 0]) > 1e-10 * max(1.0, np.abs(O).max()):
        raise ValueError("omega must be symmetric")
    w = float(w)
    val = w * w * O[0, 0] + (1 - w) ** 2 * O[1, 1] + 2 * w * (1 - w) * O[0, 1]
    if val < -1e-12:
        raise DegenerateCovarianceError(f"plug-in variance {val:.3g} is negative; omega is not PSD")
    return max(val, 0.0)


def band_halfwidth(abs_dev: np.ndarray, coverage: float) -> np.ndarray:
    """Lower ``coverage`` quantile per column: the ceil(coverage * B)-th order
    statistic, and zero when coverage is zero."""
    if not 0.0 <= coverage <= 1.0:
        raise ValueError("coverage must lie in [0, 1]")
    B = abs_dev.shape[0]
    k = int(np.ceil(coverage * B - 1e-9))
    if k <= 0:
        return np.zeros(abs_dev.shape[1])
    return np.sort(abs_dev, axis=0)[k - 1]


@dataclass
class Band:
    center: np.ndarray
    delta: np.ndarray
    coverage: float
    draws: np.ndarray = field(repr=False, default=None)  # averaged estimates per kept draw
    failed: list = field(default_factory=list)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.delta

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.delta

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "estimate", "lower", "upper", "halfwidth", "coverage"])
            for h in range(self.center.size):
                w.writerow([h, format_number(self.center[h]), format_number(self.lower[h]),
                            format_number(self.upper[h]), format_number(self.delta[h]), format_number(self.coverage)])


@dataclass
class WildSetup:
    model: VarModel
    resid: np.ndarray  # (N, n)
    Y0: np.ndarray  # original first p rows
    data: TimeSeriesPanel
    p_est: int


def _wild_setup(panel: TimeSeriesPanel, wiring: Wiring, p: Optional[int]) -> WildSetup:
    model = fit_var(panel, wiring.sieve_criterion, wiring.sieve_order_cap(panel.T, panel.n))
    p_est = lag_order(panel, wiring) if p is None else p
    return WildSetup(model, model.residuals, panel.data[:model.p].copy(), panel, p_est)


def wild_resample(ws: WildSetup, B: int, seed: int, keys=("outer",), start: int = 0) -> Resampled:
    """Rademacher multipliers, one per period, shared by residuals and the auxiliary series."""
    panel, model = ws.data, ws.model
    T, n, p = panel.T, panel.n, model.p
    N = T - p
    eta = np.empty((B, N))
    for i in range(B):
        eta[i] = 2.0 * generator(*_draw_keys(seed, keys, start + i)).integers(0, 2, size=N) - 1.0
    innov = np.zeros((B, T, n))
    innov[:, p:] = eta[:, :, None] * ws.resid
    init = np.broadcast_to(ws.Y0, (B, p, n)) if p else None
    Y = recurse(model.coefs, innov, intercept=model.intercept, init=init)
    shocks = z = None
    if panel.shock is not None:
        S = panel.shock_matrix
        shocks = np.broadcast_to(S, (B,) + S.shape).copy()
        shocks[:, p:] *= eta[:, :, None]
    if panel.instrument is not None:
        z = np.broadcast_to(panel.instrument, (B, T)).copy()
        z[:, p:] *= eta  # NaN stays NaN
    return Resampled(Y, shocks, z)


_OUTER_BLOCK = 10


def _point(panel, wiring, B_weights, seed, weights, point):
    if point is None:
        point = estimate_pair(panel, wiring)
    if weights is None:
        weights = plugin_weight(panel, wiring, B_weights, seed, point.p, keys=("point",)).weights
    center = weights.weights * point.theta_lp.values + (1 - weights.weights) * point.theta_var.values
    return point, weights, center


def wild_band(panel: TimeSeriesPanel, wiring: Wiring, B: int, coverage: float, seed: int,
              weights: Optional[WeightSchedule] = None, point: Optional[PairEstimate] = None,
              B_weights: Optional[int] = None) -> Band:
    """Centred wild-bootstrap band for the averaged estimator.

    The averaging weights are those of the original sample (computed by the
    sieve plug-in with ``B_weights`` draws unless supplied).
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    point, weights, center = _point(panel, wiring, B_weights or B, seed, weights, point)
    ws = _wild_setup(panel, wiring, point.p)
    w = weights.weights

    def make(start, size):
        return wild_resample(ws, size, seed, ("outer",), start)

    def est(rs):
        return estimate_pair_batch(rs.Y, rs.aux(wiring.mode), wiring, ws.p_est)

    # fixed blocks keep every draw bitwise identical to the nested band's outer loop
    batch, failed = _run_draws(make, B, _OUTER_BLOCK, est)
    _check_failures(failed, B, "wild")
    keep = batch.ok
    avg = w * batch.theta_lp[keep] + (1 - w) * batch.theta_var[keep]
    delta = band_halfwidth(np.abs(avg - center), coverage)
    return Band(center, delta, coverage, avg, failed.tolist())



def _outer_block(ws: WildSetup, wiring: Wiring, B_inner: int, seed: int, start: int, size: int,
                 fixed=None):
    # ``fixed`` holds original-sample weights; the inner loop is then skipped
    panel = ws.data
    outer = wild_resample(ws, size, seed, ("outer",), start)
    est = estimate_pair_batch(outer.Y, outer.aux(wiring.mode), wiring, ws.p_est)
    res = []
    for i in range(size):
        b = start + i
        if not est.ok[i]:
            res.append((b, None))
            continue
        if fixed is None:
            shock = None
            if outer.shocks is not None:
                shock = outer.shocks[i] if panel.shock.ndim == 2 else outer.shocks[i, :, 0]
            z = None if outer.instrument is None else outer.instrument[i]
            pseudo = TimeSeriesPanel(outer.Y[i], panel.names, shock=shock, instrument=z)
            try:
                wb = plugin_weight(pseudo, wiring, B_inner, seed, ws.p_est, keys=("inner", b)).weights.weights
            except (IrfavgError, np.linalg.LinAlgError):
                res.append((b, None))
                continue
        else:
            wb = fixed
        res.append((b, wb * est.theta_lp[i] + (1 - wb) * est.theta_var[i]))
    return res


def _outer_block_limited(*args):
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        return _outer_block(*args)


def nested_band(panel: TimeSeriesPanel, wiring: Wiring, B_outer: int, B_inner: int, coverage: float,
                seed: int, reuse_weights: bool = False, weights: Optional[WeightSchedule] = None,
                point: Optional[PairEstimate] = None, threads: int = 1) -> Band:
    """Double bootstrap: wild outer draws, sieve plug-in weights re-estimated inside.

    Outer draw ``b`` uses the stream ``(seed, "outer", b)`` and its inner draw
    ``j`` the stream ``(seed, "inner", b, j)``. With ``reuse_weights`` the
    inner loop is skipped and the original weights are applied to every outer
    draw, which reproduces :func:`wild_band` draw for draw.
    """
    if B_outer < 2 or B_inner < 2:
        raise ValueError("B_outer and B_inner must be at least 2")
    point, weights, center = _point(panel, wiring, B_inner, seed, weights, point)
    fixed = weights.weights if reuse_weights else None
    ws = _wild_setup(panel, wiring, point.p)
    starts = list(range(0, B_outer, _OUTER_BLOCK))
    sizes = [min(_OUTER_BLOCK, B_outer - s) for s in starts]
    if threads > 1 and len(starts) > 1:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=threads)(delayed(_outer_block_limited)(ws, wiring, B_inner, seed, s, k, fixed)
                                         for s, k in zip(starts, sizes))
    else:
        parts = [_outer_block(ws, wiring, B_inner, seed, s, k, fixed) for s, k in zip(starts, sizes)]
    results = sorted((x for part in parts for x in part), key=lambda t: t[0])
    failed = [b for b, v in results if v is None]
    _check_failures(failed, B_outer, "outer")
    avg = np.array([v for _, v in results if v is not None])
    delta = band_halfwidth(np.abs(avg - center), coverage)
    return Band(center, delta, coverage, avg, failed)
