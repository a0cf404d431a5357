"""Simulation of (S)VARMA data-generating processes and their exact IRFs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import TimeSeriesPanel
from .errors import ConfigError, StationarityError
from .rng import generator

DEFAULT_BURN_IN = 200


def companion(ar: np.ndarray) -> np.ndarray:
    """Companion matrix of a stack of ``p`` n x n lag matrices."""
    ar = np.asarray(ar, dtype=float)
    p, n = ar.shape[0], ar.shape[1]
    C = np.zeros((n * p, n * p))
    C[:n] = np.hstack(list(ar))
    if p > 1:
        C[n:, :-n] = np.eye(n * (p - 1))
    return C


def spectral_radius(ar: np.ndarray) -> float:
    ar = np.asarray(ar, dtype=float)
    if ar.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion(ar)))))


def vma(ar: np.ndarray, H: int, ma: Optional[np.ndarray] = None, impact: Optional[np.ndarray] = None) -> np.ndarray:
    """Moving-average coefficients of ``y_t = sum_j A_j y_{t-j} + sum_k M_k e_{t-k}``.

    Without ``ma``/``impact`` this is the reduced-form map with ``Phi_0 = I``.
    Returns an array of shape ``(H + 1, n, n)``.
    """
    ar = np.asarray(ar, dtype=float)
    p = ar.shape[0]
    n = ar.shape[1] if p else (np.asarray(impact).shape[0] if impact is not None else 1)
    M = [np.eye(n) if impact is None else np.asarray(impact, dtype=float)]
    if ma is not None:
        M += [np.asarray(m, dtype=float) for m in ma]
    out = np.zeros((H + 1, n, n))
    for h in range(H + 1):
        acc = M[h].copy() if h < len(M) else np.zeros((n, n))
        for j in range(1, min(h, p) + 1):
            acc += ar[j - 1] @ out[h - j]
        out[h] = acc
    return out


@dataclass
class DgpSpec:
    """SVARMA(p, q) coefficients. ``ma`` holds M_1..M_q; ``impact`` is M_0."""

    n: int
    p: int
    q: int
    ar: list = field(default_factory=list)
    ma: list = field(default_factory=list)
    impact: Optional[np.ndarray] = None
    burn_in: int = DEFAULT_BURN_IN
    name: str = "custom"

    def __post_init__(self):
        n = int(self.n)
        self.ar = [np.asarray(a, dtype=float).reshape(n, n) for a in self.ar]
        self.ma = [np.asarray(m, dtype=float).reshape(n, n) for m in self.ma]
        self.impact = np.eye(n) if self.impact is None else np.asarray(self.impact, dtype=float).reshape(n, n)
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise ConfigError(f"expected {self.p} AR and {self.q} MA matrices, got {len(self.ar)} and {len(self.ma)}")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        rad = spectral_radius(self.ar_stack)
        if not rad < 1.0:
            raise StationarityError(f"{self.name}: companion spectral radius {rad:.4f} >= 1")
        if abs(np.linalg.det(self.impact)) < 1e-12:
            raise ConfigError(f"{self.name}: impact matrix is singular")

    @property
    def ar_stack(self) -> np.ndarray:
        return np.array(self.ar).reshape(self.p, self.n, self.n)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "p": self.p,
            "q": self.q,
            "ar": [a.tolist() for a in self.ar],
            "ma": [m.tolist() for m in self.ma],
            "impact": self.impact.tolist(),
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        missing = {"n", "p", "q", "ar", "ma", "impact"} - set(d)
        if missing:
            raise ConfigError(f"DGP config missing keys: {sorted(missing)}")
        return cls(n=int(d["n"]), p=int(d["p"]), q=int(d["q"]), ar=d["ar"], ma=d["ma"],
                   impact=d["impact"], burn_in=int(d.get("burn_in", DEFAULT_BURN_IN)),
                   name=d.get("name", "custom"))


def save_spec(spec: DgpSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_spec(path) -> DgpSpec:
    return DgpSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TrueIrf:
    """Population responses; ``values[h, i, j]`` is variable i to shock j."""

    values: np.ndarray

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.values.shape[0])

    def scalar(self, response: int = 0, shock: int = 0) -> np.ndarray:
        return self.values[:, response, shock].copy()


def true_irf(spec: DgpSpec, H: int) -> TrueIrf:
    if H < 0:
        raise ValueError("H must be non-negative")
    return TrueIrf(vma(spec.ar_stack, H, spec.ma, spec.impact))


def recurse(ar: np.ndarray, innovations: np.ndarray, intercept=None, init=None) -> np.ndarray:
    """Run ``y_t = c + sum_j A_j y_{t-j} + v_t`` over a batch of paths.

    ``innovations`` has shape (B, N, n). ``init`` (B, p, n) supplies the first
    p rows verbatim (their innovations are ignored); otherwise pre-sample
    values are zero. Each path is computed with the same elementwise
    operation order whatever the batch size, so results are bitwise stable.
    """
    ar = np.asarray(ar, dtype=float)
    v = np.asarray(innovations, dtype=float)
    B, N, n = v.shape
    p = ar.shape[0]
    y = np.zeros((B, N, n))
    start = 0
    if init is not None:
        start = init.shape[1]
        y[:, :start] = init
    c = None if intercept is None else np.broadcast_to(np.asarray(intercept, dtype=float), (B, n))
    terms = [(j, k, ar[j - 1][:, k]) for j in range(1, p + 1) for k in range(n)
             if np.any(ar[j - 1][:, k] != 0.0)]
    for t in range(start, N):
        acc = v[:, t].copy()
        if c is not None:
            acc += c
        for j, k, col in terms:
            if t - j >= 0:
                acc += y[:, t - j, k:k + 1] * col
        y[:, t] = acc
    return y


def simulate_batch(spec: DgpSpec, T: int, seeds: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one path per seed; returns ``(Y, shocks)`` each (B, T, n).

    ``seeds`` entries are ints or key tuples passed to :func:`irfavg.rng.generator`.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    N = T + spec.burn_in
    eps = []
    for s in seeds:
        rng = generator(*s) if isinstance(s, tuple) else generator(int(s))
        eps.append(rng.standard_normal((N, spec.n)))
    eps = np.array(eps).reshape(-1, N, spec.n)
    v = eps @ spec.impact.T
    for k, M in enumerate(spec.ma, start=1):
        v[:, k:] += eps[:, :-k] @ M.T
    y = recurse(spec.ar_stack, v)
    return y[:, spec.burn_in:], eps[:, spec.burn_in:]


def simulate(spec: DgpSpec, T: int, seed) -> TimeSeriesPanel:
    """Simulate a sample of length ``T`` with recorded structural shocks."""
    y, e = simulate_batch(spec, T, [seed])
    shock = e[0, :, 0] if spec.n == 1 else e[0]
    names = ["y"] if spec.n == 1 else [f"y{i + 1}" for i in range(spec.n)]
    return TimeSeriesPanel(y[0], names, shock=shock)


def arma(rho: float, alpha: float, burn_in: int = DEFAULT_BURN_IN) -> DgpSpec:
    """Univariate ARMA(1,1): ``y_t = rho y_{t-1} + e_t + alpha e_{t-1}``."""
    return DgpSpec(n=1, p=1, q=1, ar=[[[rho]]], ma=[[[alpha]]], impact=[[1.0]],
                   burn_in=burn_in, name=f"arma({rho:g},{alpha:g})")


def svar4() -> DgpSpec:
    ar = [
        [[1.31, 0.75, 0.25], [-0.12, 2.08, 0.23], [-0.23, 0.56, 1.75]],
        [[-0.52, -1.06, -0.35], [0.16, -1.59, -0.33], [0.32, -0.78, -1.12]],
        [[0.04, 0.48, 0.16], [-0.08, 0.53, 0.15], [-0.14, 0.35, 0.31]],
        [[0.01, -0.07, -0.02], [0.01, -0.06, -0.02], [0.02, -0.05, -0.03]],
    ]
    impact = [[2.0, -1.5, 0.2], [1.7, 1.3, 0.7], [0.6, -0.6, 1.7]]
    return DgpSpec(n=3, p=4, q=0, ar=ar, ma=[], impact=impact, name="svar4")


def svarma41() -> DgpSpec:
    ar = [
        [[1.24, -0.04, -0.03], [-0.58, 1.77, 0.32], [-0.78, 0.76, 1.63]],
        [[-0.52, 0.02, 0.06], [0.74, -1.23, -0.39], [1.04, -0.98, -1.02]],
        [[0.08, 0.00, -0.03], [-0.30, 0.39, 0.16], [-0.44, 0.41, 0.29]],
        [[-0.01, 0.00, 0.00], [0.04, -0.04, -0.02], [0.06, -0.05, -0.03]],
    ]
    ma = [[[-0.30, 0.10, -0.40], [-0.20, 0.20, -1.00], [-0.30, 0.07, 0.20]]]
    impact = [[1.30, 0.40, 0.10], [-0.02, 0.05, 2.00], [-0.08, -1.70, 0.80]]
    return DgpSpec(n=3, p=4, q=1, ar=ar, ma=ma, impact=impact, name="svarma41")


_REGISTRY = {"arma": arma, "svar4": svar4, "svarma41": svarma41}


def builtin_specs() -> dict:
    """Name -> factory. ``arma`` takes ``(rho, alpha)``; the others no arguments."""
    return dict(_REGISTRY)


def get_spec(name: str, *params: float) -> DgpSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown DGP {name!r}; available: {', '.join(sorted(_REGISTRY))}") from None
    return factory(*params)
