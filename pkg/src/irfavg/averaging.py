"""Mean-squared-error decomposition and weighting rules for LP/VAR averaging."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import IrfEstimate, format_number
from .errors import HorizonMismatchError

DEFAULT_GUARD = 1e-12
FLEX_RATIO_CAP = 1e6
W_GRID = np.round(np.arange(0, 101) * 0.01, 10)
A_GRID = np.round(np.arange(0, 21) * 0.05, 10)
B_GRID = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
METHODS = ("oracle", "plugin", "flexible", "direct", "model-avg", "fixed")


@dataclass
class RiskComponents:
    """Per-horizon variances, covariance and biases of the two estimators."""

    V_L: np.ndarray
    V_V: np.ndarray
    C: np.ndarray
    b_L: np.ndarray
    b_V: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in (self.V_L, self.V_V, self.C, self.b_L, self.b_V)]
        if len({a.shape for a in arrs}) != 1:
            raise HorizonMismatchError("risk components must share one horizon grid")
        self.V_L, self.V_V, self.C, self.b_L, self.b_V = arrs

    @property
    def a(self) -> np.ndarray:
        return self.V_L + self.b_L ** 2

    @property
    def d(self) -> np.ndarray:
        return self.V_V + self.b_V ** 2

    @property
    def f(self) -> np.ndarray:
        return self.C + self.b_L * self.b_V

    def __len__(self):
        return self.V_L.size

    def at(self, h: int) -> "RiskComponents":
        return RiskComponents(self.V_L[h], self.V_V[h], self.C[h], self.b_L[h], self.b_V[h])

    @classmethod
    def from_adf(cls, a, d, f) -> "RiskComponents":
        """Zero-bias components reproducing given (a, d, f)."""
        return cls(a, d, f, np.zeros_like(np.asarray(a, dtype=float)), np.zeros_like(np.asarray(a, dtype=float)))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "V_L", "V_V", "C", "b_L", "b_V", "a", "d", "f"])
            for h in range(len(self)):
                w.writerow([h] + [format_number(x[h]) for x in
                                  (self.V_L, self.V_V, self.C, self.b_L, self.b_V, self.a, self.d, self.f)])


@dataclass
class WeightSchedule:
    """Per-horizon weight on LP (the VAR gets one minus it)."""

    weights: np.ndarray
    method: str
    flags: np.ndarray = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.flags is None:
            self.flags = np.zeros(self.weights.shape, dtype=bool)
        self.flags = np.atleast_1d(np.asarray(self.flags, dtype=bool))
        if np.any(self.weights < 0) or np.any(self.weights > 1) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must lie in [0, 1]")

    @property
    def H(self) -> int:
        return self.weights.size - 1

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "method", "weight", "safeguard"])
            for h, (x, g) in enumerate(zip(self.weights, self.flags)):
                w.writerow([h, self.method, format_number(x), int(g)])


def combined_mse(w, risk: RiskComponents):
    """``w^2 a + (1 - w)^2 d + 2 w (1 - w) f``; broadcasts over w and horizons."""
    w = np.asarray(w, dtype=float)
    val = w * w * risk.a + (1 - w) ** 2 * risk.d + 2 * w * (1 - w) * risk.f
    return val if val.ndim else float(val)


def oracle_weight_raw(a, d, f, guard: float = DEFAULT_GUARD):
    """Unclipped closed form and the safeguard flag, vectorised."""
    a, d, f = (np.asarray(x, dtype=float) for x in (a, d, f))
    den = a + d - 2 * f
    scale = np.maximum.reduce([a, d, np.abs(f), np.ones_like(a)])
    flag = ~(den >= guard * scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(flag, 0.5, (d - f) / np.where(flag, 1.0, den))
    return w, flag


def oracle_weight(risk: RiskComponents, guard: float = DEFAULT_GUARD, method: str = "oracle") -> WeightSchedule:
    """MSE-minimising weight clipped to [0, 1]; 0.5 with a flag when the
    curvature ``a + d - 2 f`` is negligible."""
    w, flag = oracle_weight_raw(risk.a, risk.d, risk.f, guard)
    return WeightSchedule(np.clip(w, 0.0, 1.0), method, flag)


def oracle_weight_k(G, guard: float = DEFAULT_GUARD):
    """K-estimator weights ``G^{-1} 1 / (1' G^{-1} 1)`` (not clipped).

    Returns ``(weights, flag)``; equal weights with ``flag=True`` when G is
    numerically singular.
    """
    G = np.asarray(G, dtype=float)
    K = G.shape[0]
    G = 0.5 * (G + G.T)
    s = np.linalg.svd(G, compute_uv=False)
    equal = np.full(K, 1.0 / K)
    if s[0] == 0 or s[-1] < guard * s[0]:
        return equal, True
    x = np.linalg.solve(G, np.ones(K))
    tot = x.sum()
    if not np.isfinite(tot) or abs(tot) < guard * np.abs(x).sum():
        return equal, True
    return x / tot, False


def flexible_weight(theta_lp: IrfEstimate, theta_var: IrfEstimate, a: float, b: float) -> WeightSchedule:
    """``a / (1 + b r_h^2)`` with ``r_h`` the relative LP/VAR discrepancy."""
    lp, vr = _aligned(theta_lp, theta_var)
    w = _flex(lp, vr, a, b)
    return WeightSchedule(np.clip(w, 0.0, 1.0), "flexible", params={"a": float(a), "b": float(b)})


def _flex_ratio2(lp, vr):
    s = lp + vr
    small = np.abs(s) < 1e-12
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        r2 = ((lp - vr) / np.where(small, 1.0, s)) ** 2
    return np.where(small | (r2 > FLEX_RATIO_CAP), FLEX_RATIO_CAP, r2)


def _flex(lp, vr, a, b):
    return a / (1.0 + b * _flex_ratio2(lp, vr))


def calibrate_flexible(draws_lp: np.ndarray, draws_var: np.ndarray, pseudo_truth: np.ndarray,
                       a_grid: Sequence[float] = A_GRID, b_grid: Sequence[float] = B_GRID,
                       rtol: float = 1e-12):
    """Grid choice of ``(a, b)`` minimising bootstrap MSE summed over horizons.

    Draw arrays are (B, H + 1). Within ``rtol`` of the minimum the
    lexicographically smallest pair wins. Returns ``(a, b, objective)``.
    """
    L = np.asarray(draws_lp, dtype=float)
    V = np.asarray(draws_var, dtype=float)
    if L.shape != V.shape or L.ndim != 2 or L.shape[0] < 2:
        raise ValueError("need at least two aligned draws")
    truth = np.asarray(pseudo_truth, dtype=float)
    a_grid = np.sort(np.asarray(a_grid, dtype=float))
    b_grid = np.sort(np.asarray(b_grid, dtype=float))
    r2 = _flex_ratio2(L, V)  # (B, H+1)
    eL = L - truth
    eV = V - truth
    obj = np.empty((a_grid.size, b_grid.size))
    for j, b in enumerate(b_grid):
        base = 1.0 / (1.0 + b * r2)
        for i, a in enumerate(a_grid):
            w = np.clip(a * base, 0.0, 1.0)
            err = w * eL + (1 - w) * eV
            obj[i, j] = np.mean(np.sum(err * err, axis=1))
    best = obj.min()
    tol = rtol * max(abs(best), 1e-300)
    i, j = np.argwhere(obj <= best + tol)[0]  # row-major: smallest a, then smallest b
    return float(a_grid[i]), float(b_grid[j]), float(obj[i, j])


def direct_weight(draws_lp: np.ndarray, draws_var: np.ndarray, pseudo_truth: np.ndarray,
                  grid: Sequence[float] = W_GRID) -> WeightSchedule:
    """Per-horizon grid minimiser of bootstrap MSE around the pseudo-truth."""
    L = np.asarray(draws_lp, dtype=float)
    V = np.asarray(draws_var, dtype=float)
    if L.shape != V.shape or L.ndim != 2 or L.shape[0] < 2:
        raise ValueError("need at least two aligned draws")
    grid = np.sort(np.asarray(grid, dtype=float))
    eL = L - pseudo_truth
    eV = V - pseudo_truth
    # mean of (w eL + (1-w) eV)^2 expanded in moments, exact for each grid w
    mLL = np.mean(eL * eL, axis=0)
    mVV = np.mean(eV * eV, axis=0)
    mLV = np.mean(eL * eV, axis=0)
    g = grid[:, None]
    mse = g * g * mLL + (1 - g) ** 2 * mVV + 2 * g * (1 - g) * mLV
    idx = np.argmin(mse, axis=0)
    return WeightSchedule(grid[idx], "direct")


def model_avg_weight(r2_lp, r2_var: float) -> WeightSchedule:
    """``R2_LP,h / (R2_LP,h + R2_VAR)``; 0.5 (flagged) when both are zero."""
    r2_lp = np.atleast_1d(np.asarray(r2_lp, dtype=float))
    if np.any((r2_lp < 0) | (r2_lp > 1)) or not 0 <= r2_var <= 1:
        raise ValueError("R-squared values must lie in [0, 1]")
    den = r2_lp + r2_var
    flag = den <= 0
    w = np.where(flag, 0.5, r2_lp / np.where(flag, 1.0, den))
    return WeightSchedule(w, "model-avg", flag)


def model_avg_weight_batch(r2_lp: np.ndarray, r2_var: np.ndarray) -> np.ndarray:
    den = r2_lp + r2_var[:, None]
    return np.where(den <= 0, 0.5, r2_lp / np.where(den <= 0, 1.0, den))


def _aligned(theta_lp, theta_var):
    lp = theta_lp.values if isinstance(theta_lp, IrfEstimate) else np.atleast_1d(np.asarray(theta_lp, dtype=float))
    vr = theta_var.values if isinstance(theta_var, IrfEstimate) else np.atleast_1d(np.asarray(theta_var, dtype=float))
    if lp.shape != vr.shape:
        raise HorizonMismatchError(f"LP has {lp.size} horizons, VAR has {vr.size}")
    return lp, vr


def combine(theta_lp: IrfEstimate, theta_var: IrfEstimate, w: WeightSchedule) -> IrfEstimate:
    lp, vr = _aligned(theta_lp, theta_var)
    weights = w.weights if isinstance(w, WeightSchedule) else np.atleast_1d(np.asarray(w, dtype=float))
    if weights.shape != lp.shape:
        raise HorizonMismatchError(f"{weights.size} weights for {lp.size} horizons")
    method = w.method if isinstance(w, WeightSchedule) else "avg"
    return IrfEstimate(weights * lp + (1 - weights) * vr, f"avg-{method}")
