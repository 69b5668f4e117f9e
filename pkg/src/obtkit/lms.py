"""LMS (Box-Cox Cole-Green) percentile curves by weighted penalized likelihood.

Each observation is modelled as Box-Cox normal at its age::

    z = ((y / M)**L - 1) / (L * S)      (log(y / M) / S when L == 0)

with L, M, S smooth functions of age.  The fit cycles over the three
parameters; each update is one Fisher-scoring step whose working response
is smoothed against age with a penalized cubic spline at a fixed effective
degrees of freedom.  M and S use log links, L the identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .smoothing import PenalizedSpline

log = logging.getLogger(__name__)

PERCENTILES = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)
L_ZERO = 1e-7
S_FLOOR = 1e-6
MIN_OBSERVATIONS = 50
GRID_STEP = 1.0 / 12.0
OBT_M_SHIFT = 720.0


class LmsError(ValueError):
    pass


@dataclass(frozen=True)
class LmsConfig:
    edf_L: float = 3.0
    edf_M: float = 5.0
    edf_S: float = 3.0
    tol: float = 1e-6
    max_iter: int = 50
    n_knots: int = 20


@dataclass
class PercentileCurveSet:
    age_grid: np.ndarray
    L: np.ndarray
    M: np.ndarray
    S: np.ndarray
    edf: dict[str, float]
    converged: bool
    iterations: int
    percentiles: tuple[float, ...] = PERCENTILES
    shift: float = 0.0
    deviance: float = float("nan")
    n: int = 0
    meta: dict = field(default_factory=dict)

    def lms_at(self, age: float) -> tuple[float, float, float]:
        if not self.age_grid[0] - 1e-9 <= age <= self.age_grid[-1] + 1e-9:
            raise ValueError(f"age {age} outside grid {self.age_grid[0]:.3f}..{self.age_grid[-1]:.3f}")
        return (float(np.interp(age, self.age_grid, self.L)),
                float(np.interp(age, self.age_grid, self.M)),
                float(np.interp(age, self.age_grid, self.S)))

    def table(self) -> pd.DataFrame:
        """Grid with L, M, S and every requested percentile on the original axis."""
        out = pd.DataFrame({"age": self.age_grid, "L": self.L, "M": self.M - self.shift, "S": self.S})
        for p in self.percentiles:
            z = stats.norm.ppf(p)
            out[f"P{round(p * 100)}"] = _lms_value(self.L, self.M, self.S, z) - self.shift
        return out

    def metadata(self) -> dict:
        return {
            "edf": self.edf,
            "iterations": self.iterations,
            "converged": self.converged,
            "axis_shift_min": self.shift,
            "global_deviance": self.deviance,
            "n": self.n,
            "percentiles": list(self.percentiles),
            **self.meta,
        }


def normalize_weights(weights) -> np.ndarray:
    """Rescale positive weights so they sum to their count."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return w
    if not (w > 0).all():
        raise ValueError("weights must be positive")
    return w * (w.size / w.sum())


def _lms_value(L, M, S, z):
    L, M, S = np.broadcast_arrays(np.asarray(L, float), np.asarray(M, float), np.asarray(S, float))
    small = np.abs(L) <= L_ZERO
    Ls = np.where(small, 1.0, L)
    with np.errstate(invalid="ignore", divide="ignore"):
        power = M * np.exp(np.log1p(Ls * S * z) / Ls)
    return np.where(small, M * np.exp(S * z), power)


def _z(y, L, M, S):
    r = np.log(y / M)
    small = np.abs(L) <= L_ZERO
    Ls = np.where(small, 1.0, L)
    return np.where(small, r / S, np.expm1(Ls * r) / (Ls * S))


def bccg_loglik(y, L, M, S) -> np.ndarray:
    """Per-observation Box-Cox normal log density (untruncated)."""
    z = _z(y, L, M, S)
    return (L - 1) * np.log(y) - L * np.log(M) - np.log(S) - 0.5 * z * z - 0.5 * np.log(2 * np.pi)


def _score_L(y, L, M, S):
    r = np.log(y / M)
    z = _z(y, L, M, S)
    small = np.abs(L) <= L_ZERO
    Ls = np.where(small, 1.0, L)
    dz = np.where(small, r * r / (2 * S), (r * np.exp(Ls * r)) / (Ls * S) - z / Ls)
    return r - z * dz


def fit_lms(ages, values, weights=None, config: LmsConfig | None = None, shift: float = 0.0) -> PercentileCurveSet:
    """Fit smooth L, M, S curves of age to positive values.

    ``shift`` is added to the values before fitting (and removed again by
    every output on the original axis); use it for signed quantities.
    Weights are normalised to sum to the sample size first.
    """
    cfg = config or LmsConfig()
    x = np.asarray(ages, dtype=float)
    y = np.asarray(values, dtype=float) + shift
    if x.shape != y.shape:
        raise LmsError("ages and values differ in length")
    if y.size < MIN_OBSERVATIONS:
        raise LmsError(f"need at least {MIN_OBSERVATIONS} observations, got {y.size}")
    if not (y > 0).all():
        raise LmsError("values must be positive on the fitting axis")
    w = normalize_weights(np.ones_like(y) if weights is None else weights)

    grid = np.arange(x.min(), x.max() + GRID_STEP / 2, GRID_STEP)
    grid = np.clip(grid, x.min(), x.max())
    grid[-1] = x.max()

    if np.ptp(y) <= 1e-12 * abs(y[0]):
        c = float(y[0])
        return PercentileCurveSet(grid, np.ones_like(grid), np.full_like(grid, c), np.full_like(grid, S_FLOOR),
                                  {"L": 0.0, "M": 1.0, "S": 0.0}, True, 0, shift=shift, deviance=float("nan"), n=y.size,
                                  meta={"degenerate": "constant data"})

    spline = PenalizedSpline(x, cfg.n_knots)
    edf_target = {"L": cfg.edf_L, "M": cfg.edf_M, "S": cfg.edf_S}

    # start: smooth log-median, constant spread, best constant power
    logy = np.log(y)
    fits = {"M": spline.fit(logy, w, cfg.edf_M)}
    eta_M = fits["M"].fitted
    resid = logy - eta_M
    s0 = max(float(np.sqrt(np.sum(w * resid ** 2) / w.sum())), S_FLOOR)
    fits["S"] = spline.fit(np.full_like(y, np.log(s0)), w, cfg.edf_S)
    eta_S = fits["S"].fitted
    L_grid = np.linspace(-3, 3, 61)
    ll = [np.sum(w * bccg_loglik(y, l, np.exp(eta_M), np.exp(eta_S))) for l in L_grid]
    fits["L"] = spline.fit(np.full_like(y, L_grid[int(np.argmax(ll))]), w, cfg.edf_L)
    eta_L = fits["L"].fitted

    def deviance(eL, eM, eS):
        val = -2 * np.sum(w * bccg_loglik(y, eL, np.exp(eM), np.exp(eS)))
        return float(val) if np.isfinite(val) else np.inf

    def penalized(dev):
        return dev + sum(f.penalty for f in fits.values())

    dev = deviance(eta_L, eta_M, eta_S)
    pdev = penalized(dev)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        for name in ("M", "S", "L"):
            L, M, S = eta_L, np.exp(eta_M), np.exp(eta_S)
            z = _z(y, L, M, S)
            if name == "M":
                eta, u, info = eta_M, z / S + L * (z * z - 1), (1 + 2 * L * L * S * S) / (S * S)
            elif name == "S":
                eta, u, info = eta_S, z * z - 1, np.full_like(y, 2.0)
            else:
                eta, u, info = eta_L, _score_L(y, L, M, S), 1.75 * S * S
            info = np.maximum(info, 1e-12)
            fit = spline.fit(eta + u / info, w * info, edf_target[name])
            proposal = fit.fitted
            step = 1.0
            for _ in range(20):
                trial = eta + step * (proposal - eta)
                parts = {"L": eta_L, "M": eta_M, "S": eta_S}
                parts[name] = trial
                new_dev = deviance(parts["L"], parts["M"], parts["S"])
                if new_dev <= dev + 1e-9 * abs(dev):
                    break
                step /= 2
            else:
                continue
            if step < 1.0:
                fit.coef = fits[name].coef + step * (fit.coef - fits[name].coef)
            fits[name] = fit
            if name == "M":
                eta_M = fit.fitted
            elif name == "S":
                eta_S = fit.fitted
            else:
                eta_L = fit.fitted
            dev = deviance(eta_L, eta_M, eta_S)
        new_pdev = penalized(dev)
        change = abs(pdev - new_pdev) / max(abs(new_pdev), 1e-12)
        pdev = new_pdev
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        log.warning("LMS fit did not converge in %d iterations", cfg.max_iter)

    L_g = fits["L"](grid)
    M_g = np.exp(fits["M"](grid))
    S_g = np.maximum(np.exp(fits["S"](grid)), S_FLOOR)
    return PercentileCurveSet(
        age_grid=grid, L=L_g, M=M_g, S=S_g,
        edf={k: f.edf for k, f in fits.items()},
        converged=converged, iterations=it, shift=shift, deviance=dev, n=int(y.size),
        meta={"penalized_deviance": pdev},
    )


def percentile_at(curves: PercentileCurveSet, age: float, p: float) -> float:
    """Value of the ``p`` percentile at ``age`` on the original axis."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    L, M, S = curves.lms_at(age)
    z = float(stats.norm.ppf(p))
    return lms_value(L, M, S, z) - curves.shift


def lms_value(L: float, M: float, S: float, z: float) -> float:
    if abs(L) <= L_ZERO:
        return M * np.exp(S * z)
    base = 1 + L * S * z
    if base <= 0:
        raise LmsError(f"z={z:.4f} outside the support of L={L:.4g}, S={S:.4g}")
    return float(M * np.exp(np.log1p(L * S * z) / L))


def z_score(curves: PercentileCurveSet, age: float, value: float) -> float:
    """Standard normal deviate of ``value`` at ``age`` (inverse of :func:`percentile_at`)."""
    y = value + curves.shift
    if y <= 0:
        raise LmsError("value must be positive on the fitting axis")
    L, M, S = curves.lms_at(age)
    return lms_z(L, M, S, y)


def lms_z(L: float, M: float, S: float, y: float) -> float:
    if abs(L) <= L_ZERO:
        return float(np.log(y / M) / S)
    # expm1 keeps full precision for |L| just above the log branch
    return float(np.expm1(L * np.log(y / M)) / (L * S))


def sample_bccg(L, M, S, rng: np.random.Generator) -> np.ndarray:
    """Draw one BCCG value per (L, M, S) triple, redrawing out-of-support deviates."""
    L, M, S = np.broadcast_arrays(np.asarray(L, float), np.asarray(M, float), np.asarray(S, float))
    out = np.full(L.shape, np.nan)
    todo = np.ones(L.shape, dtype=bool)
    while todo.any():
        z = rng.standard_normal(int(todo.sum()))
        out[todo] = _lms_value(L[todo], M[todo], S[todo], z)
        todo = ~(np.isfinite(out) & (out > 0))
    return out
