"""Horizon-by-horizon local projection estimates of impulse responses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    IrfEstimate,
    RegressionFit,
    TimeSeriesPanel,
    batch_gram_solve,
    batch_iv_solve,
    ols,
    tsls,
)
from .errors import IdentificationError, InsufficientDataError, SingularDesignError

MODES = ("shock", "iv", "recursive")


@dataclass(frozen=True)
class LpConfig:
    """Local projection setup.

    mode
        ``"shock"``: the impulse is column ``impulse`` of the recorded shocks.
        ``"recursive"``: the impulse is variable ``impulse``; variables ordered
        before it in ``order`` enter contemporaneously as controls.
        ``"iv"``: variable ``impulse`` is instrumented by the panel's
        instrument and the response is scaled by ``scale``.
    """

    H: int
    lags: int
    response: int = 0
    mode: str = "shock"
    impulse: int = 0
    order: Optional[tuple] = None
    scale: float = 1.0
    include_constant: bool = True
    f_floor: float = 10.0

    def __post_init__(self):
        if self.H < 0 or self.lags < 0:
            raise ValueError("H and lags must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def contemporaneous(self, n: int) -> list[int]:
        if self.mode != "recursive":
            return []
        order = list(self.order) if self.order is not None else list(range(n))
        if sorted(order) != list(range(n)):
            raise ValueError("order must be a permutation of the variable indices")
        return order[:order.index(self.impulse)]


@dataclass
class LpResult:
    irf: IrfEstimate
    fits: list[RegressionFit]

    @property
    def r_squared(self) -> np.ndarray:
        return np.array([f.r_squared for f in self.fits])


def _impulse_series(panel: TimeSeriesPanel, cfg: LpConfig) -> np.ndarray:
    if cfg.mode == "shock":
        S = panel.shock_matrix
        if S is None:
            raise IdentificationError("observed-shock mode needs a shock series")
        return S[:, cfg.impulse]
    return panel.data[:, cfg.impulse]


def lp_irf(panel: TimeSeriesPanel, cfg: LpConfig) -> LpResult:
    """Estimate ``theta_h`` for ``h = 0..H`` by one regression per horizon.

    Horizon ``h`` regresses ``y_{t+h}`` on a constant, the impulse ``x_t``,
    any contemporaneous controls and ``lags`` lags of every variable, using
    all ``t`` with ``lags <= t < T - h`` (0-based).
    """
    Y = panel.data
    T, n = Y.shape
    p = cfg.lags
    x = _impulse_series(panel, cfg)
    contemp = cfg.contemporaneous(n)
    if cfg.mode == "iv" and panel.instrument is None:
        raise IdentificationError("IV mode needs an instrument series")
    names = (["const"] if cfg.include_constant else []) + ["impulse"]
    names += [f"{panel.names[c]}_t" for c in contemp]
    names += [f"{panel.names[i]}_lag{l}" for l in range(1, p + 1) for i in range(n)]
    col = 1 if cfg.include_constant else 0

    fits = []
    est = np.empty(cfg.H + 1)
    for h in range(cfg.H + 1):
        rows = np.arange(p, T - h)
        k = len(names)
        if rows.size < k + (1 if cfg.mode == "iv" else 0):
            raise InsufficientDataError(
                f"horizon {h}: {max(rows.size, 0)} usable rows for {k} regressors")
        blocks = [x[rows, None]] + [Y[rows][:, contemp]] + [Y[rows - l] for l in range(1, p + 1)]
        if cfg.include_constant:
            blocks.insert(0, np.ones((rows.size, 1)))
        X = np.hstack(blocks)
        target = Y[rows + h, cfg.response]
        try:
            if cfg.mode == "iv":
                fit = tsls(X, col, panel.instrument[rows], target, f_floor=cfg.f_floor, names=names)
            else:
                fit = ols(X, target, names=names)
        except SingularDesignError as exc:
            raise SingularDesignError(f"horizon {h}: {exc}", column=exc.column) from exc
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"horizon {h}: {exc}") from exc
        fits.append(fit)
        est[h] = fit.coefficients[col]
    if cfg.mode == "iv":
        est = est * cfg.scale
    return LpResult(IrfEstimate(est, "lp"), fits)


def lp_batch(Y: np.ndarray, x: np.ndarray, cfg: LpConfig, instrument: Optional[np.ndarray] = None):
    """Vectorised :func:`lp_irf` over a stack of panels.

    ``Y`` is (B, T, n), ``x`` the impulse series (B, T) and ``instrument``
    (B, T) with NaN marking missing rows. Returns ``(theta, r2, ok)`` with
    theta and r2 of shape (B, H + 1) and a per-panel success flag.
    """
    B, T, n = Y.shape
    p = cfg.lags
    contemp = cfg.contemporaneous(n)
    theta = np.full((B, cfg.H + 1), np.nan)
    r2 = np.full((B, cfg.H + 1), np.nan)
    ok = np.ones(B, dtype=bool)
    col = 1 if cfg.include_constant else 0
    for h in range(cfg.H + 1):
        rows = np.arange(p, T - h)
        N = rows.size
        blocks = [x[:, rows, None], Y[:, rows][:, :, contemp]]
        blocks += [Y[:, rows - l] for l in range(1, p + 1)]
        if cfg.include_constant:
            blocks.insert(0, np.ones((B, N, 1)))
        X = np.concatenate(blocks, axis=2)
        if N < X.shape[2] + 1:
            raise InsufficientDataError(f"horizon {h}: {N} usable rows for {X.shape[2]} regressors")
        target = Y[:, rows + h, cfg.response]
        if cfg.mode == "iv":
            z = instrument[:, rows]
            w = (~np.isnan(z)).astype(float)
            Zm = X.copy()
            Zm[:, :, col] = np.nan_to_num(z)
            beta, good = batch_iv_solve(X, Zm, target, w)
        else:
            w = None
            beta, good = batch_gram_solve(X, target)
        ok &= good
        theta[:, h] = beta[:, col]
        r2[:, h] = _batch_r2(X, target, beta, w, cfg.include_constant)
    if cfg.mode == "iv":
        theta *= cfg.scale
    ok &= np.all(np.isfinite(theta), axis=1)
    return theta, r2, ok


def _batch_r2(X, y, beta, w, centered):
    resid = y - np.einsum("bnk,bk->bn", X, beta)
    if w is None:
        w = np.ones_like(y)
    cnt = w.sum(axis=1)
    rss = np.sum(w * resid ** 2, axis=1)
    if centered:
        mean = np.sum(w * y, axis=1) / np.where(cnt > 0, cnt, 1)
        tss = np.sum(w * (y - mean[:, None]) ** 2, axis=1)
    else:
        tss = np.sum(w * y ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(tss > 0, 1.0 - rss / tss, 0.0)
    return np.clip(r2, 0.0, 1.0)


def lp_names(panel: TimeSeriesPanel, cfg: LpConfig) -> Sequence[str]:
    return [panel.names[cfg.response]]
