"""Time-series containers, lag matrices and least-squares primitives.

Everything here is a pure function of its inputs. Regressions use a
column-pivoted QR factorization; a column is declared redundant when its
pivot falls below ``RANK_TOL`` times the largest pivot.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    CsvFormatError,
    DegenerateCovarianceError,
    InsufficientDataError,
    SingularDesignError,
    WeakInstrumentWarning,
)

RANK_TOL = 1e-10
SHOCK_HEADER = "__shock__"
INSTRUMENT_HEADER = "__instrument__"


@dataclass
class TimeSeriesPanel:
    """T x n observations with optional observed shock(s) and instrument.

    ``shock`` is a length-T vector, or a T x k matrix when several structural
    shocks are recorded (multivariate simulations). Masked instrument entries
    are stored as NaN.
    """

    data: np.ndarray
    names: list[str] = field(default_factory=list)
    shock: Optional[np.ndarray] = None
    instrument: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("panel data must be a non-empty T x n matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("panel data contains non-finite entries")
        self.data = data
        T, n = data.shape
        if not self.names:
            self.names = [f"y{i + 1}" for i in range(n)]
        if len(self.names) != n:
            raise ValueError(f"expected {n} names, got {len(self.names)}")
        self.names = list(self.names)
        if self.shock is not None:
            shock = np.asarray(self.shock, dtype=float)
            if shock.shape[0] != T or shock.ndim > 2:
                raise ValueError(f"shock must have length {T}")
            if not np.all(np.isfinite(shock)):
                raise ValueError("shock contains non-finite entries")
            self.shock = shock
        if self.instrument is not None:
            z = np.asarray(self.instrument, dtype=float)
            if z.shape != (T,):
                raise ValueError(f"instrument must have length {T}")
            if np.any(np.isinf(z)):
                raise ValueError("instrument contains infinite entries")
            self.instrument = z

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def shock_matrix(self) -> Optional[np.ndarray]:
        if self.shock is None:
            return None
        return self.shock[:, None] if self.shock.ndim == 1 else self.shock

    @property
    def instrument_mask(self) -> Optional[np.ndarray]:
        """Boolean vector, True where the instrument is observed."""
        if self.instrument is None:
            return None
        return ~np.isnan(self.instrument)


@dataclass
class RegressionFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    rss: float
    tss: float
    r_squared: float
    dof: int
    first_stage_f: Optional[float] = None


def build_lag_matrix(panel, p: int, include_constant: bool = True):
    """Stack ``p`` lags of every variable.

    Returns ``(design, targets)`` where row ``s`` of ``design`` holds
    ``(1, Y_{t-1}', ..., Y_{t-p}')`` for ``t = p + s`` and row ``s`` of
    ``targets`` is ``Y_t'``.
    """
    data = panel.data if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if p < 0:
        raise ValueError("lag order must be non-negative")
    T = data.shape[0]
    if T <= p:
        raise InsufficientDataError(f"need more than {p} observations for {p} lags, got {T}")
    blocks = [data[p - lag:T - lag] for lag in range(1, p + 1)]
    if include_constant:
        blocks.insert(0, np.ones((T - p, 1)))
    design = np.hstack(blocks) if blocks else np.empty((T - p, 0))
    return design, data[p:]


def _pivoted_solve(X: np.ndarray, Y: np.ndarray, names: Optional[Sequence[str]] = None):
    """Least squares via pivoted QR; raises on numerical rank deficiency."""
    N, k = X.shape
    if N < k:
        raise InsufficientDataError(f"{N} rows cannot identify {k} coefficients")
    if k == 0:
        return np.zeros((0,) + Y.shape[1:])
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or not np.isfinite(diag[0]):
        bad = int(piv[0])
        raise SingularDesignError(_singular_msg(bad, names), column=bad)
    small = np.nonzero(diag < RANK_TOL * diag[0])[0]
    if small.size:
        bad = int(piv[small[0]])
        raise SingularDesignError(_singular_msg(bad, names), column=bad)
    z = Q.T @ Y
    beta_p = scipy.linalg.solve_triangular(R, z)
    beta = np.empty_like(beta_p)
    beta[piv] = beta_p
    return beta


def _singular_msg(col, names):
    label = names[col] if names is not None and col < len(names) else f"column {col}"
    return f"design matrix is rank deficient; offending regressor: {label}"


def _has_constant(X: np.ndarray) -> bool:
    return X.shape[0] > 0 and bool(np.any(np.all(X == X[:1], axis=0) & (X[0] != 0)))


def _fit_summary(X, y, beta, dof_extra=0) -> RegressionFit:
    resid = y - X @ beta
    rss = float(resid @ resid)
    if _has_constant(X):
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return RegressionFit(
        coefficients=beta,
        residuals=resid,
        rss=rss,
        tss=tss,
        r_squared=float(min(max(r2, 0.0), 1.0)),
        dof=int(X.shape[0] - X.shape[1] - dof_extra),
    )


def ols(design, target, names: Optional[Sequence[str]] = None) -> RegressionFit:
    """Ordinary least squares of ``target`` on ``design``.

    ``names`` labels the design columns in singular-design errors.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("design must be N x k and target length N")
    beta = _pivoted_solve(X, y, names)
    return _fit_summary(X, y, beta)


def tsls(design, endogenous: int, instrument, target, f_floor: float = 10.0,
         names: Optional[Sequence[str]] = None) -> RegressionFit:
    """Just-identified two-stage least squares.

    Column ``endogenous`` of ``design`` is instrumented by ``instrument``; the
    remaining columns act as their own instruments. Rows with a NaN instrument
    are dropped from both stages. A first-stage F statistic below ``f_floor``
    emits :class:`WeakInstrumentWarning`.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    z = np.asarray(instrument, dtype=float)
    keep = ~np.isnan(z)
    k = X.shape[1]
    if keep.sum() < k + 1:
        raise InsufficientDataError(
            f"instrument observed on {int(keep.sum())} rows; need at least {k + 1}")
    X, y, z = X[keep], y[keep], z[keep]
    Z = X.copy()
    Z[:, endogenous] = z

    first = ols(Z, X[:, endogenous], names)
    s2 = first.rss / max(first.dof, 1)
    ZtZ_inv = np.linalg.inv(Z.T @ Z)
    se = math.sqrt(max(s2 * ZtZ_inv[endogenous, endogenous], 0.0))
    coef = first.coefficients[endogenous]
    f_stat = (coef / se) ** 2 if se > 0 else math.inf
    if f_stat < f_floor:
        warnings.warn(f"first-stage F statistic {f_stat:.2f} is below {f_floor}",
                      WeakInstrumentWarning, stacklevel=2)

    Xhat = X.copy()
    Xhat[:, endogenous] = Z @ first.coefficients
    beta = _pivoted_solve(Xhat, y, names)
    fit = _fit_summary(X, y, beta)
    fit.first_stage_f = float(f_stat)
    return fit


def information_criterion(sigma, T: int, k: int, kind: str = "aic") -> float:
    """AIC/BIC from an ML residual covariance (or variance for n = 1)."""
    if T <= 0:
        raise ValueError("sample size must be positive")
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateCovarianceError("residual covariance has non-positive determinant")
    kind = kind.lower()
    if kind == "aic":
        return float(logdet + 2.0 * k / T)
    if kind == "bic":
        return float(logdet + k * math.log(T) / T)
    raise ValueError(f"unknown criterion {kind!r}")


def read_panel_csv(path) -> TimeSeriesPanel:
    """Read a panel from CSV; see README for the reserved headers."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CsvFormatError(path, 1, "duplicate column names")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(path, line_no, f"expected {len(header)} fields, got {len(row)}")
            values = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    if name == INSTRUMENT_HEADER:
                        values.append(math.nan)
                        continue
                    raise CsvFormatError(path, line_no, f"empty cell in column {name!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(path, line_no, f"non-numeric value {cell!r} in column {name!r}") from None
                if not math.isfinite(v):
                    raise CsvFormatError(path, line_no, f"non-finite value in column {name!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise CsvFormatError(path, 2, "no data rows")
    arr = np.array(rows, dtype=float)
    var_cols = [i for i, h in enumerate(header) if h not in (SHOCK_HEADER, INSTRUMENT_HEADER)]
    if not var_cols:
        raise CsvFormatError(path, 1, "no variable columns")
    shock = arr[:, header.index(SHOCK_HEADER)] if SHOCK_HEADER in header else None
    z = arr[:, header.index(INSTRUMENT_HEADER)] if INSTRUMENT_HEADER in header else None
    return TimeSeriesPanel(arr[:, var_cols], [header[i] for i in var_cols], shock, z)


def format_number(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


def write_panel_csv(panel: TimeSeriesPanel, path) -> None:
    header = list(panel.names)
    cols = [panel.data[:, i] for i in range(panel.n)]
    if panel.shock is not None and panel.shock.ndim == 1:
        header.append(SHOCK_HEADER)
        cols.append(panel.shock)
    if panel.instrument is not None:
        header.append(INSTRUMENT_HEADER)
        cols.append(panel.instrument)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([format_number(v) for v in row])


@dataclass
class IrfEstimate:
    """Scalar impulse-response estimates over horizons ``0..H``."""

    values: np.ndarray
    method: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.values.size)

    @property
    def H(self) -> int:
        return self.values.size - 1

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["horizon", "estimate"])
            for h, v in enumerate(self.values):
                writer.writerow([h, format_number(v)])

    @classmethod
    def from_csv(cls, path, method: str = "") -> "IrfEstimate":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        hs = [int(r["horizon"]) for r in rows]
        if hs != list(range(len(hs))):
            raise CsvFormatError(path, 2, "horizons must run 0..H in order")
        return cls(np.array([float(r["estimate"]) for r in rows]), method)


# Batched normal-equation solvers for bootstrap and Monte Carlo work. Each
# stacked problem is solved independently; draws whose Gram matrix is not
# numerically positive definite are flagged rather than raising.
_BATCH_PIVOT_TOL = 1e-8


def batch_gram_solve(X: np.ndarray, Y: np.ndarray, weights: Optional[np.ndarray] = None):
    """Solve ``min ||W^(1/2)(Y - X b)||`` for stacks X (B,N,k), Y (B,N) or (B,N,m).

    Returns ``(beta, ok)`` with beta shaped (B,k) or (B,k,m).
    """
    vec = Y.ndim == 2
    Yb = Y[..., None] if vec else Y
    Xt = np.swapaxes(X, 1, 2)
    if weights is not None:
        Xt = Xt * weights[:, None, :]
    A = Xt @ X
    b = Xt @ Yb
    beta, ok = _stack_solve(A, b, symmetric=True)
    return (beta[..., 0] if vec else beta), ok


def batch_iv_solve(X: np.ndarray, Z: np.ndarray, Y: np.ndarray, weights: Optional[np.ndarray] = None):
    """Just-identified IV ``b = (Z'WX)^{-1} Z'WY`` for stacked problems."""
    vec = Y.ndim == 2
    Yb = Y[..., None] if vec else Y
    Zt = np.swapaxes(Z, 1, 2)
    if weights is not None:
        Zt = Zt * weights[:, None, :]
    beta, ok = _stack_solve(Zt @ X, Zt @ Yb, symmetric=False)
    return (beta[..., 0] if vec else beta), ok


def _stack_solve(A, b, symmetric):
    B, k, _ = A.shape
    ok = np.all(np.isfinite(A), axis=(1, 2)) & np.all(np.isfinite(b), axis=(1, 2))
    if symmetric:
        d = np.sqrt(np.abs(np.einsum("bii->bi", A)))
        scale = np.where(d > 0, d, 1.0)
        As = A / scale[:, :, None] / scale[:, None, :]
        As = np.where(ok[:, None, None], As, np.eye(k))
        try:
            L = np.linalg.cholesky(As)
            ld = np.einsum("bii->bi", L)
            ok &= ld.min(axis=1) > _BATCH_PIVOT_TOL
        except np.linalg.LinAlgError:
            for i in range(B):
                if not ok[i]:
                    continue
                try:
                    Li = np.linalg.cholesky(As[i])
                    ok[i] = np.diag(Li).min() > _BATCH_PIVOT_TOL
                except np.linalg.LinAlgError:
                    ok[i] = False
        ok &= d.min(axis=1) > 0
    else:
        s = np.linalg.svd(np.where(ok[:, None, None], A, np.eye(k)), compute_uv=False)
        ok &= s[:, -1] > _BATCH_PIVOT_TOL ** 2 * s[:, 0]
    A_safe = np.where(ok[:, None, None], A, np.eye(k))
    b_safe = np.where(ok[:, None, None], b, 0.0)
    beta = np.linalg.solve(A_safe, b_safe)
    beta[~ok] = np.nan
    return beta, ok
