"""Moment matching of pooled hurdle means to log-normal and Gamma laws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from raincast import EPS_DIV
from raincast.binning import BinnedCDF, BinSpec
from raincast.hurdle import HurdleField, hurdle_mean
from raincast.special import erfc, gammainc, gammainc_series, gammaincc_cf

ALPHA_OVERFLOW = 1e12
# forecast shape cap; keeps the incomplete-gamma iterations short (CV >= 1e-3)
FORECAST_ALPHA_CAP = 1e6


@dataclass(frozen=True)
class LogNormalParams:
    mu_norm: float
    sigma2_norm: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_norm) and math.isfinite(self.sigma2_norm)) or self.sigma2_norm < 0:
            raise ValueError("log-normal parameters must be finite with sigma2 >= 0")

    def mean(self) -> float:
        return math.exp(self.mu_norm + 0.5 * self.sigma2_norm)

    def var(self) -> float:
        return math.expm1(self.sigma2_norm) * math.exp(2 * self.mu_norm + self.sigma2_norm)


@dataclass(frozen=True)
class GammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("gamma parameters must be positive")

    def mean(self) -> float:
        return self.alpha / self.beta

    def var(self) -> float:
        return self.alpha / self.beta**2


def match_lognormal(mean: float, var: float, eps: float = EPS_DIV) -> LogNormalParams:
    if mean < 0 or var < 0:
        raise ValueError("mean and variance must be non-negative")
    sigma2 = math.log(var / max(mean * mean, eps) + 1.0)
    mu = math.log(max(mean, eps)) - 0.5 * sigma2
    return LogNormalParams(mu, sigma2)


def match_gamma(mean: float, var: float) -> GammaParams:
    """Method of moments: ``alpha = m^2 / v``, ``beta = m / v``."""
    if not (mean > 0 and var > 0):
        raise ValueError("gamma matching needs positive mean and variance")
    alpha = mean * mean / var
    if alpha > ALPHA_OVERFLOW:
        raise OverflowError(f"matched shape {alpha:.3g} exceeds {ALPHA_OVERFLOW:g}; variance is degenerate")
    return GammaParams(alpha, mean / var)


def lognormal_cdf(x, p: LogNormalParams):
    """Log-normal CDF; a zero variance collapses to a unit step at ``exp(mu)``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    if p.sigma2_norm == 0:
        return np.where(x >= math.exp(p.mu_norm), 1.0, 0.0)
    pos = x > 0
    lx = np.log(np.where(pos, x, 1.0))
    z = (lx - p.mu_norm) / math.sqrt(2.0 * p.sigma2_norm)
    return np.where(pos, 0.5 * erfc(-z), 0.0)


def gamma_cdf(x, p: GammaParams):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    return gammainc(p.alpha, p.beta * x)


def gamma_cdf_branches(x, p: GammaParams):
    """Both incomplete-gamma branches at ``x > 0``, for consistency checks."""
    bx = p.beta * np.asarray(x, dtype=np.float64)
    return gammainc_series(p.alpha, bx), 1.0 - gammaincc_cf(p.alpha, bx)


def moment_pool(field: HurdleField, mask=None) -> tuple[float, float]:
    """Mean and population variance of the per-cell hurdle means over valid cells."""
    rmu = hurdle_mean(field)
    if mask is None:
        vals = rmu.ravel()
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != rmu.shape:
            raise ValueError("mask shape does not match field")
        vals = rmu[mask]
    if vals.size == 0:
        raise ValueError("moment pooling needs at least one valid cell")
    m = float(vals.mean())
    return m, float(np.mean((vals - m) ** 2))


def _binned(spec: BinSpec, f) -> BinnedCDF:
    f = np.clip(np.maximum.accumulate(np.asarray(f, dtype=np.float64)), 0.0, 1.0)
    f[-1] = 1.0
    return BinnedCDF(spec, f)


def aggregate_moments(field: HurdleField, mask=None, scale: float = 4.0) -> tuple[float, float]:
    """Pooled cell moments rescaled to the four-hour aggregate (``y = 4 * mean cell rate``)."""
    m, v = moment_pool(field, mask)
    return scale * m, scale * scale * v


def lognormal_forecast(field: HurdleField, spec: BinSpec, mask=None) -> BinnedCDF:
    m, v = aggregate_moments(field, mask)
    return _binned(spec, lognormal_cdf(spec.values, match_lognormal(m, v)))


def gamma_forecast(field: HurdleField, spec: BinSpec, mask=None, eps: float = EPS_DIV) -> BinnedCDF:
    """Gamma-matched forecast; mean and variance are floored like the log-normal ``max`` guards.

    The variance is also floored at ``m**2 / FORECAST_ALPHA_CAP`` so a near-constant
    field gives a sharp but finite shape instead of a step.
    """
    m, v = aggregate_moments(field, mask)
    m = max(m, eps)
    v = max(v, m * m / FORECAST_ALPHA_CAP, eps * eps)
    return _binned(spec, gamma_cdf(spec.values, match_gamma(m, v)))
