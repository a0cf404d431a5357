"""Reduced-form VAR estimation, lag selection and structural identification."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .core import IrfEstimate, TimeSeriesPanel, _pivoted_solve, batch_gram_solve, build_lag_matrix, information_criterion
from .dgp import spectral_radius, vma
from .errors import (
    ExplosiveModelWarning,
    IdentificationError,
    InsufficientDataError,
    IrrelevantInstrumentError,
)

DEFAULT_P_MAX = 8


@dataclass
class VarModel:
    """OLS VAR(p) with constant. ``sigma`` uses the ML divisor (T - p)."""

    p: int
    intercept: np.ndarray
    coefs: np.ndarray  # (p, n, n)
    residuals: np.ndarray  # (T - p, n)
    sigma: np.ndarray
    r_squared: np.ndarray  # per equation
    names: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.intercept.shape[0]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.coefs)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "names": list(self.names),
            "intercept": self.intercept.tolist(),
            "coefs": self.coefs.tolist(),
            "sigma": self.sigma.tolist(),
            "r_squared": self.r_squared.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _as_data(panel) -> np.ndarray:
    data = panel.data if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    return data[:, None] if data.ndim == 1 else data


def _fit_fixed(data: np.ndarray, p: int, names=None) -> VarModel:
    X, Y = build_lag_matrix(data, p)
    n = Y.shape[1]
    labels = ["const"] + [f"{(names or [f'y{i + 1}' for i in range(n)])[i]}_lag{l}"
                          for l in range(1, p + 1) for i in range(n)]
    beta = _pivoted_solve(X, Y, labels)  # (1 + n p, n)
    resid = Y - X @ beta
    sigma = resid.T @ resid / resid.shape[0]
    ybar = Y - Y.mean(axis=0)
    tss = np.sum(ybar ** 2, axis=0)
    rss = np.sum(resid ** 2, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(tss > 0, 1.0 - rss / tss, 0.0)
    coefs = beta[1:].T.reshape(n, p, n).transpose(1, 0, 2) if p else np.zeros((0, n, n))
    return VarModel(p, beta[0].copy(), coefs, resid, sigma, np.clip(r2, 0.0, 1.0),
                    list(names) if names else [f"y{i + 1}" for i in range(n)])


def select_order(panel, criterion: str = "aic", p_max: int = DEFAULT_P_MAX) -> int:
    """Information-criterion order choice on the common sample ``t >= p_max``.

    Ties go to the smaller order.
    """
    data = _as_data(panel)
    T, n = data.shape
    if T <= n * p_max + 1 + p_max:
        raise InsufficientDataError(f"T={T} too small for p_max={p_max} with {n} variables")
    ics = []
    for p in range(p_max + 1):
        model = _fit_fixed(data[p_max - p:], p)
        ics.append(information_criterion(model.sigma, T - p_max, n * (n * p + 1), criterion))
    return int(np.argmin(ics))  # first minimiser, i.e. smallest order on ties


def fit_var(panel, p: Union[int, str] = "aic", p_max: int = DEFAULT_P_MAX) -> VarModel:
    """Fit a VAR by equation-wise OLS with a constant.

    ``p`` is a fixed order or ``"aic"``/``"bic"`` for automatic selection over
    ``0..p_max``; the chosen order is refitted on the full sample.
    """
    data = _as_data(panel)
    names = panel.names if isinstance(panel, TimeSeriesPanel) else None
    if isinstance(p, str):
        p = select_order(data, p, p_max)
    if p < 0:
        raise ValueError("lag order must be non-negative")
    if data.shape[0] <= data.shape[1] * p + 1 + p:
        raise InsufficientDataError(f"T={data.shape[0]} too small for a VAR({p}) in {data.shape[1]} variables")
    return _fit_fixed(data, int(p), names)


@dataclass
class StructuralId:
    """Identified impact column (response of every variable on impact)."""

    mode: str
    column: np.ndarray
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.column = np.asarray(self.column, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.column)):
            raise IdentificationError(f"{self.mode}: impact column is not finite")


def identify_observed(model: VarModel, shocks: np.ndarray, shock: int = 0) -> StructuralId:
    """Impact column from regressing residuals on a constant and all recorded shocks.

    ``shocks`` is aligned with the full sample (length T); the first ``p``
    rows are dropped to match the residuals.
    """
    S = np.asarray(shocks, dtype=float)
    S = S[:, None] if S.ndim == 1 else S
    S = S[model.p:]
    if S.shape[0] != model.residuals.shape[0]:
        raise IdentificationError("shock series does not match the estimation sample")
    X = np.hstack([np.ones((S.shape[0], 1)), S])
    beta = _pivoted_solve(X, model.residuals, ["const"] + [f"shock{j + 1}" for j in range(S.shape[1])])
    return StructuralId("shock", beta[1 + shock], {"shock": shock})


def _chol_column(sigma: np.ndarray, impulse: int, order=None) -> np.ndarray:
    n = sigma.shape[0]
    order = list(range(n)) if order is None else list(order)
    if sorted(order) != list(range(n)):
        raise ValueError("order must be a permutation of the variable indices")
    S = sigma[np.ix_(order, order)]
    try:
        P = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise IdentificationError("residual covariance is not positive definite") from None
    pos = order.index(impulse)
    col = np.empty(n)
    col[order] = P[:, pos]
    return col / col[impulse]


def identify_cholesky(model: VarModel, impulse: int = 0, order=None) -> StructuralId:
    """Recursive identification, normalised to a unit impact on ``impulse``."""
    return StructuralId("recursive", _chol_column(model.sigma, impulse, order),
                        {"impulse": impulse, "order": list(order) if order is not None else None})


def identify_proxy(model: VarModel, instrument: np.ndarray, policy: int = 0,
                   scale: float = 1.0, f_floor: float = 10.0) -> StructuralId:
    """External-instrument identification by the covariance-ratio column.

    The column is ``Cov(v_t, z_t) / Cov(v_policy,t, z_t) * scale`` over rows
    where the instrument is observed. A first-stage F statistic (policy
    residual on the instrument) below ``f_floor`` is treated as irrelevance.
    """
    z = np.asarray(instrument, dtype=float)[model.p:]
    if z.shape[0] != model.residuals.shape[0]:
        raise IdentificationError("instrument does not match the estimation sample")
    keep = ~np.isnan(z)
    n = model.n
    if keep.sum() < n + 1:
        raise InsufficientDataError(f"instrument observed on {int(keep.sum())} rows; need at least {n + 1}")
    V = model.residuals[keep]
    zc = z[keep] - z[keep].mean()
    Vc = V - V.mean(axis=0)
    cov = Vc.T @ zc / zc.size
    f_stat = _first_stage_f(Vc[:, policy], zc)
    if not f_stat >= f_floor:
        raise IrrelevantInstrumentError(
            f"instrument is irrelevant for the policy residual (F = {f_stat:.3g} < {f_floor})")
    return StructuralId("proxy", cov / cov[policy] * scale,
                        {"policy": policy, "scale": scale, "first_stage_f": f_stat})


def _first_stage_f(v: np.ndarray, zc: np.ndarray) -> float:
    zz = zc @ zc
    if zz <= 0:
        return 0.0
    g = (zc @ v) / zz
    e = v - v.mean() - g * zc
    dof = max(v.size - 2, 1)
    s2 = (e @ e) / dof
    if s2 <= 0:
        return np.inf
    return float(g * g * zz / s2)


def var_irf(model: VarModel, ident: StructuralId, H: int, response: int = 0) -> IrfEstimate:
    """``theta_h = (Phi_h @ column)[response]`` with the reduced-form VMA ``Phi``."""
    if H < 0:
        raise ValueError("H must be non-negative")
    if model.p and model.spectral_radius >= 1.0:
        warnings.warn(f"fitted VAR has spectral radius {model.spectral_radius:.4f} >= 1",
                      ExplosiveModelWarning, stacklevel=2)
    Phi = vma(model.coefs, H) if model.p else _identity_vma(model.n, H)
    return IrfEstimate(Phi[:, response, :] @ ident.column, "var")


def _identity_vma(n, H):
    out = np.zeros((H + 1, n, n))
    out[0] = np.eye(n)
    return out


# Batched counterparts used by the bootstrap engines. Lag orders are fixed.

def var_batch(Y: np.ndarray, p: int):
    """Fit VAR(p) with constant to a stack (B, T, n).

    Returns ``(intercept (B,n), coefs (B,p,n,n), resid (B,T-p,n), ok)``.
    """
    B, T, n = Y.shape
    blocks = [np.ones((B, T - p, 1))] + [Y[:, p - l:T - l] for l in range(1, p + 1)]
    X = np.concatenate(blocks, axis=2)
    target = Y[:, p:]
    beta, ok = batch_gram_solve(X, target)  # (B, 1 + n p, n)
    resid = target - X @ np.nan_to_num(beta)
    coefs = np.swapaxes(beta[:, 1:], 1, 2).reshape(B, n, p, n).transpose(0, 2, 1, 3)
    return beta[:, 0], coefs, resid, ok


def vma_batch(coefs: np.ndarray, H: int) -> np.ndarray:
    """Reduced-form VMA coefficients (B, H+1, n, n) for stacked lag matrices."""
    B, p, n, _ = coefs.shape
    out = np.zeros((B, H + 1, n, n))
    out[:, 0] = np.eye(n)
    for h in range(1, H + 1):
        acc = np.zeros((B, n, n))
        for j in range(1, min(h, p) + 1):
            acc += coefs[:, j - 1] @ out[:, h - j]
        out[:, h] = acc
    return out


def identify_observed_batch(resid: np.ndarray, shocks: np.ndarray, shock: int = 0):
    """``resid`` (B,N,n), ``shocks`` (B,N,k) already aligned. Returns (B,n) columns and ok."""
    B, N, _ = resid.shape
    X = np.concatenate([np.ones((B, N, 1)), shocks], axis=2)
    beta, ok = batch_gram_solve(X, resid)
    return beta[:, 1 + shock], ok


def identify_cholesky_batch(resid: np.ndarray, impulse: int = 0, order=None):
    B, N, n = resid.shape
    order = list(range(n)) if order is None else list(order)
    sigma = np.swapaxes(resid, 1, 2) @ resid / N
    S = sigma[:, order][:, :, order]
    ok = np.all(np.isfinite(S), axis=(1, 2))
    S = np.where(ok[:, None, None], S, np.eye(n))
    d = np.linalg.eigvalsh(S)[:, 0]
    ok &= d > 0
    S = np.where(ok[:, None, None], S, np.eye(n))
    P = np.linalg.cholesky(S)
    pos = order.index(impulse)
    col = np.empty((B, n))
    col[:, order] = P[:, :, pos]
    col = col / col[:, impulse:impulse + 1]
    col[~ok] = np.nan
    return col, ok


def identify_proxy_batch(resid: np.ndarray, z: np.ndarray, policy: int = 0,
                         scale: float = 1.0, f_floor: float = 10.0):
    """``z`` (B,N) aligned with residuals, NaN where masked."""
    B, N, n = resid.shape
    w = (~np.isnan(z)).astype(float)
    zf = np.nan_to_num(z)
    cnt = w.sum(axis=1)
    safe = np.where(cnt > 0, cnt, 1.0)
    zc = (zf - (w * zf).sum(axis=1, keepdims=True) / safe[:, None]) * w
    vbar = (w[:, :, None] * resid).sum(axis=1) / safe[:, None]
    Vc = (resid - vbar[:, None, :]) * w[:, :, None]
    cov = np.einsum("bnk,bn->bk", Vc, zc) / safe[:, None]
    zz = np.sum(zc * zc, axis=1)
    v = Vc[:, :, policy]
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.sum(zc * v, axis=1) / zz
        e = (v - g[:, None] * zc) * w
        s2 = np.sum(e * e, axis=1) / np.maximum(cnt - 2, 1)
        f_stat = g * g * zz / s2
        col = cov / cov[:, policy:policy + 1] * scale
    ok = (cnt >= n + 1) & (zz > 0) & (f_stat >= f_floor) & np.all(np.isfinite(col), axis=1)
    col[~ok] = np.nan
    return col, ok


def var_r2_batch(Y: np.ndarray, resid: np.ndarray, p: int, response: int = 0) -> np.ndarray:
    target = Y[:, p:, response]
    tss = np.sum((target - target.mean(axis=1, keepdims=True)) ** 2, axis=1)
    rss = np.sum(resid[:, :, response] ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(tss > 0, 1.0 - rss / tss, 0.0)
    return np.clip(r2, 0.0, 1.0)
