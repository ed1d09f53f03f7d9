"""Rainfall-accumulation bins and the discrete PMF/CDF forecast objects.

Bin ``j`` (0-based here) stands for the accumulation ``v_j = j * epsilon``,
so the first bin is exactly zero rain and the last is ``r_max``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from raincast.tensorio import read_json, read_tensor, write_json, write_tensor

CDF_TOL = 1e-9


class ClampWarning(UserWarning):
    """A target or sample above ``r_max`` was clamped onto the last bin."""


@dataclass(frozen=True)
class BinSpec:
    r_max: float
    epsilon: float
    k: int

    def __post_init__(self):
        if not (self.r_max > 0 and self.epsilon > 0):
            raise ValueError("r_max and epsilon must be positive")
        if self.k != round(self.r_max / self.epsilon) + 1:
            raise ValueError(f"k={self.k} inconsistent with r_max/epsilon={self.r_max / self.epsilon}")

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.k, dtype=np.float64) * self.epsilon

    def to_json(self) -> dict:
        return {"r_max": self.r_max, "epsilon": self.epsilon, "k": self.k}


def make_spec(r_max: float, epsilon: float) -> BinSpec:
    """Build the bin grid ``K = R_max / epsilon + 1``; the ratio must be integral."""
    if not (r_max > 0 and epsilon > 0):
        raise ValueError("r_max and epsilon must be positive")
    ratio = r_max / epsilon
    n = round(ratio)
    if abs(ratio - n) > 1e-6:
        raise ValueError(f"r_max/epsilon = {ratio!r} is not an integer")
    return BinSpec(float(r_max), float(epsilon), int(n) + 1)


PRESETS = {
    "desk": (8.0, 0.05),
    "dino-coarse": (128.0, 1.0),
    "dino-fine": (128.0, 0.005),
    "unet-v4": (512.0, 4.0),
    "unet-v10": (64.0, 0.01),
}


def preset(name: str) -> BinSpec:
    try:
        return make_spec(*PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown bin preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class BinnedPMF:
    spec: BinSpec
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (self.spec.k,):
            raise ValueError(f"pmf has {p.shape} entries, spec wants {self.spec.k}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > CDF_TOL:
            raise ValueError("pmf must be non-negative and sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class BinnedCDF:
    spec: BinSpec
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        if f.shape != (self.spec.k,):
            raise ValueError(f"cdf has {f.shape} entries, spec wants {self.spec.k}")
        if np.any(np.diff(f) < -CDF_TOL) or np.any(f < -CDF_TOL) or np.any(f > 1 + CDF_TOL):
            raise ValueError("cdf must be non-decreasing within [0, 1]")
        if abs(f[-1] - 1.0) > CDF_TOL:
            raise ValueError(f"cdf must end at 1, got {f[-1]!r}")
        f.flags.writeable = False
        object.__setattr__(self, "f", f)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def pmf_from_logits(z, spec: BinSpec) -> BinnedPMF:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return BinnedPMF(spec, softmax(z))


def cdf_from_pmf(pmf: BinnedPMF) -> BinnedCDF:
    f = np.cumsum(pmf.p)
    # absorb rounding so the terminal value is exactly 1
    f = np.minimum(f / f[-1], 1.0)
    return BinnedCDF(pmf.spec, f)


def _clamp(values, spec: BinSpec, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    over = values > spec.r_max
    if np.any(over):
        warnings.warn(
            f"{int(over.sum())} {what} above r_max={spec.r_max} clamped", ClampWarning, stacklevel=3
        )
        values = np.minimum(values, spec.r_max)
    return values


def target_step(y: float, spec: BinSpec) -> np.ndarray:
    """Indicator vector ``1(v_j >= y)``; ties count as 1."""
    if not y >= 0:
        raise ValueError(f"target must be non-negative, got {y!r}")
    y = float(_clamp(y, spec, "target"))
    return (spec.values >= y).astype(np.float64)


def target_cdf(y: float, spec: BinSpec) -> BinnedCDF:
    return BinnedCDF(spec, target_step(y, spec))


def ecdf_from_samples(samples, spec: BinSpec) -> BinnedCDF:
    """Fraction of samples ``<= v_j`` at every bin value."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("need at least one sample")
    if np.any(~(s >= 0)):
        raise ValueError("samples must be non-negative")
    s = np.sort(_clamp(s, spec, "samples"))
    counts = np.searchsorted(s, spec.values, side="right")
    return BinnedCDF(spec, counts / s.size)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_ecdf_from_samples(samples, spec: BinSpec, tau: float | None = None) -> BinnedCDF:
    """Smooth eCDF ``mean_s sigmoid((v_j - s) / tau)``, differentiable in each sample.

    ``tau`` defaults to ``epsilon / 10``. The terminal bin is pinned to 1 so
    the result is a proper CDF; that bin carries no information about the
    samples once they are clamped to ``r_max``.
    """
    if tau is None:
        tau = spec.epsilon / 10.0
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("need at least one sample")
    s = _clamp(s, spec, "samples")
    f = _sigmoid((spec.values[:, None] - s[None, :]) / tau).mean(axis=1)
    f[-1] = 1.0
    return BinnedCDF(spec, f)


def soft_ecdf_grad(samples, spec: BinSpec, tau: float | None = None) -> np.ndarray:
    """Jacobian ``d f_j / d s_i`` of :func:`soft_ecdf_from_samples`, shape (K, N)."""
    if tau is None:
        tau = spec.epsilon / 10.0
    s = np.asarray(samples, dtype=np.float64).ravel()
    sig = _sigmoid((spec.values[:, None] - s[None, :]) / tau)
    jac = -sig * (1.0 - sig) / (tau * s.size)
    jac[-1] = 0.0
    return jac


def write_cdf(cdf: BinnedCDF, path) -> None:
    path = Path(path)
    write_tensor(cdf.f, path)
    write_json(cdf.spec.to_json(), path.with_name(path.name + ".json"))


def read_cdf(path) -> BinnedCDF:
    path = Path(path)
    meta = read_json(path.with_name(path.name + ".json"))
    spec = BinSpec(float(meta["r_max"]), float(meta["epsilon"]), int(meta["k"]))
    return BinnedCDF(spec, read_tensor(path))


def clamp_count(caught) -> int:
    """Number of clamp warnings in a ``warnings.catch_warnings(record=True)`` list."""
    return sum(1 for w in caught if issubclass(w.category, ClampWarning))

