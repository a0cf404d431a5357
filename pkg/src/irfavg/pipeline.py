"""Joint LP/VAR estimation under one identification scheme.

A :class:`Wiring` fixes how the impulse is identified, which variable
responds and how lag orders are chosen. The same wiring drives estimation on
the observed sample and on every bootstrap pseudo-sample, so the two
estimators always target the same response.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .core import IrfEstimate, TimeSeriesPanel
from .errors import ConfigError, IdentificationError
from .lp import LpConfig, LpResult, lp_batch, lp_irf
from .var import (
    StructuralId,
    VarModel,
    fit_var,
    identify_cholesky,
    identify_cholesky_batch,
    identify_observed,
    identify_observed_batch,
    identify_proxy,
    identify_proxy_batch,
    var_batch,
    var_irf,
    var_r2_batch,
    vma_batch,
)


@dataclass(frozen=True)
class Wiring:
    """Estimator configuration shared by LP and VAR.

    mode
        ``shock`` (recorded structural shock number ``impulse``),
        ``recursive`` (unit shock to variable ``impulse`` under ``order``) or
        ``iv`` (variable ``impulse`` instrumented, impact scaled to ``scale``).
    lags
        Fixed VAR/LP lag order or ``"aic"``/``"bic"`` for selection up to
        ``p_max``. LP controls always use the VAR's order.
    sieve_criterion, sieve_p_max
        Order choice for the bootstrap sieve. ``sieve_p_max=None`` means
        ``floor(10 log10 T)`` for one variable and ``p_max`` otherwise.
    """

    H: int = 10
    mode: str = "recursive"
    response: int = 0
    impulse: int = 0
    lags: Union[int, str] = 1
    p_max: int = 8
    order: Optional[tuple] = None
    scale: float = 1.0
    f_floor: float = 10.0
    sieve_criterion: str = "bic"
    sieve_p_max: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("shock", "recursive", "iv"):
            raise ConfigError(f"unknown identification mode {self.mode!r}")
        if self.H < 0:
            raise ConfigError("H must be non-negative")
        if isinstance(self.lags, str) and self.lags not in ("aic", "bic"):
            raise ConfigError(f"lags must be an integer, 'aic' or 'bic', not {self.lags!r}")
        if self.order is not None:
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    def lp_config(self, p: int) -> LpConfig:
        return LpConfig(H=self.H, lags=p, response=self.response, mode=self.mode, impulse=self.impulse,
                        order=self.order, scale=self.scale, f_floor=self.f_floor)

    def sieve_order_cap(self, T: int, n: int) -> int:
        if self.sieve_p_max is not None:
            return int(self.sieve_p_max)
        if n == 1:
            return max(int(10 * math.log10(T)), 1)
        return self.p_max

    def to_dict(self) -> dict:
        d = asdict(self)
        d["order"] = list(self.order) if self.order is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Wiring":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown wiring keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class PairEstimate:
    theta_lp: IrfEstimate
    theta_var: IrfEstimate
    r2_lp: np.ndarray
    r2_var: float
    p: int
    var_model: VarModel
    ident: StructuralId
    lp: LpResult = field(repr=False, default=None)


def check_identification(panel: TimeSeriesPanel, wiring: Wiring) -> None:
    if wiring.mode == "shock":
        if panel.shock is None:
            raise IdentificationError("no recorded shock column for observed-shock identification")
        if wiring.impulse >= panel.shock_matrix.shape[1]:
            raise IdentificationError(f"shock index {wiring.impulse} out of range")
    elif wiring.mode == "iv" and panel.instrument is None:
        raise IdentificationError("no instrument column for IV identification")
    for idx, label in ((wiring.response, "response"), (wiring.impulse if wiring.mode != "shock" else 0, "impulse")):
        if not 0 <= idx < panel.n:
            raise IdentificationError(f"{label} index {idx} out of range for {panel.n} variables")


def identify(model: VarModel, panel: TimeSeriesPanel, wiring: Wiring) -> StructuralId:
    if wiring.mode == "shock":
        return identify_observed(model, panel.shock_matrix, wiring.impulse)
    if wiring.mode == "recursive":
        return identify_cholesky(model, wiring.impulse, wiring.order)
    return identify_proxy(model, panel.instrument, wiring.impulse, wiring.scale, wiring.f_floor)


def estimate_pair(panel: TimeSeriesPanel, wiring: Wiring) -> PairEstimate:
    """LP and VAR impulse responses plus the R-squared inputs for model averaging."""
    check_identification(panel, wiring)
    model = fit_var(panel, wiring.lags, wiring.p_max)
    ident = identify(model, panel, wiring)
    theta_var = var_irf(model, ident, wiring.H, wiring.response)
    lp = lp_irf(panel, wiring.lp_config(model.p))
    return PairEstimate(lp.irf, theta_var, lp.r_squared, float(model.r_squared[wiring.response]),
                        model.p, model, ident, lp)


@dataclass
class BatchEstimate:
    theta_lp: np.ndarray  # (B, H + 1)
    theta_var: np.ndarray
    r2_lp: np.ndarray
    r2_var: np.ndarray  # (B,)
    ok: np.ndarray

    def take(self, mask: np.ndarray) -> "BatchEstimate":
        return BatchEstimate(self.theta_lp[mask], self.theta_var[mask], self.r2_lp[mask],
                             self.r2_var[mask], self.ok[mask])


def estimate_pair_batch(Y: np.ndarray, aux: Optional[np.ndarray], wiring: Wiring, p: int) -> BatchEstimate:
    """Vectorised :func:`estimate_pair` with the lag order held at ``p``.

    ``aux`` carries the recorded shocks (B,T,k) in shock mode or the
    instrument (B,T) in IV mode; it is ignored for recursive identification.
    """
    cfg = wiring.lp_config(p)
    if wiring.mode == "shock":
        x = aux[:, :, wiring.impulse]
    else:
        x = Y[:, :, wiring.impulse]
    theta_lp, r2_lp, ok = lp_batch(Y, x, cfg, instrument=aux if wiring.mode == "iv" else None)

    _, coefs, resid, ok_var = var_batch(Y, p)
    if wiring.mode == "shock":
        col, ok_id = identify_observed_batch(resid, aux[:, p:], wiring.impulse)
    elif wiring.mode == "recursive":
        col, ok_id = identify_cholesky_batch(resid, wiring.impulse, wiring.order)
    else:
        col, ok_id = identify_proxy_batch(resid, aux[:, p:], wiring.impulse, wiring.scale, wiring.f_floor)
    Phi = vma_batch(np.nan_to_num(coefs), wiring.H)
    theta_var = np.einsum("bhk,bk->bh", Phi[:, :, wiring.response, :], np.nan_to_num(col))
    ok = ok & ok_var & ok_id & np.all(np.isfinite(theta_var), axis=1)
    theta_var[~ok] = np.nan
    theta_lp[~ok] = np.nan
    return BatchEstimate(theta_lp, theta_var, r2_lp, var_r2_batch(Y, resid, p, wiring.response), ok)
