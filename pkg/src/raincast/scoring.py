"""Target reduction, Ranked Probability Score and its discrete CRPS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from raincast.binning import BinnedCDF, BinSpec, ecdf_from_samples, softmax, target_step
from raincast.tensorio import RainCube

SLOTS_PER_TARGET = 16
SLOTS_PER_HOUR = 4


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    y: float
    rps: float
    crps: float


def aggregate_target(cube: RainCube) -> float:
    """Four-hour accumulation (mm): per-slot spatial mean over valid pixels, summed, divided by 4."""
    if cube.shape[0] != SLOTS_PER_TARGET:
        raise ValueError(f"aggregate target needs {SLOTS_PER_TARGET} slots, got {cube.shape[0]}")
    n_valid = cube.valid.sum(axis=(1, 2))
    if np.any(n_valid == 0):
        raise ValueError(f"slot(s) {np.flatnonzero(n_valid == 0).tolist()} have no valid pixel")
    sums = np.where(cube.valid, cube.rate, 0.0).sum(axis=(1, 2))
    return float(math.fsum(sums / n_valid) / SLOTS_PER_HOUR)


def _check_spec(f: BinnedCDF, spec: BinSpec | None):
    if spec is not None and f.spec != spec:
        raise ValueError(f"forecast spec {f.spec} does not match {spec}")


def rps(f: BinnedCDF, y: float, spec: BinSpec | None = None) -> float:
    """Sum over bins of the squared gap between forecast CDF and the target step."""
    _check_spec(f, spec)
    r = f.f - target_step(y, f.spec)
    return float(np.dot(r, r))


def crps(f: BinnedCDF, y: float, spec: BinSpec | None = None) -> float:
    """Bin-width weighted RPS, a Riemann sum of the CRPS integral (mm)."""
    return f.spec.epsilon * rps(f, y, spec)


def score(sample_id: str, f: BinnedCDF, y: float) -> ScoreRecord:
    r = rps(f, y)
    return ScoreRecord(sample_id, float(y), r, f.spec.epsilon * r)


def pairwise_sum(values) -> float:
    """Fixed-shape tree reduction, so the result never depends on how work was split."""
    v = [float(x) for x in values]
    if not v:
        return 0.0
    while len(v) > 1:
        nxt = [v[i] + v[i + 1] for i in range(0, len(v) - 1, 2)]
        if len(v) % 2:
            nxt.append(v[-1])
        v = nxt
    return v[0]


def rps_loss_batch(fs, ys) -> float:
    fs, ys = list(fs), list(ys)
    if len(fs) != len(ys):
        raise ValueError(f"{len(fs)} forecasts but {len(ys)} targets")
    if not fs:
        raise ValueError("empty batch")
    return pairwise_sum(rps(f, y) for f, y in zip(fs, ys)) / len(fs)


def rps_from_logits(z, y: float, spec: BinSpec) -> float:
    f = np.cumsum(softmax(z))
    r = f - target_step(y, spec)
    return float(np.dot(r, r))


def rps_grad_logits(z, y: float, spec: BinSpec) -> np.ndarray:
    """Exact gradient of RPS(cumsum(softmax(z)), y) with respect to the logits ``z``.

    Threshold residuals ``2 (F_k - step_k)`` are pushed back through the
    prefix sum as suffix sums, then through the softmax Jacobian.
    """
    z = np.asarray(z, dtype=np.float64)
    return rps_grad_logits_batch(z[None, :], np.array([y]), spec)[0]


def rps_grad_logits_batch(z, ys, spec: BinSpec):
    """Row-wise :func:`rps_grad_logits` for a (B, K) logit matrix."""
    p = softmax(z)
    steps = np.stack([target_step(float(y), spec) for y in ys])
    resid = 2.0 * (np.cumsum(p, axis=1) - steps)
    g = np.cumsum(resid[:, ::-1], axis=1)[:, ::-1]
    return p * (g - np.sum(p * g, axis=1, keepdims=True))


def rps_values_batch(z, ys, spec: BinSpec) -> np.ndarray:
    p = softmax(z)
    steps = np.stack([target_step(float(y), spec) for y in ys])
    r = np.cumsum(p, axis=1) - steps
    return np.sum(r * r, axis=1)


def climatology_baseline(ys_train, spec: BinSpec) -> BinnedCDF:
    """Training-set marginal eCDF, the no-skill reference forecast."""
    ys = np.asarray(list(ys_train), dtype=np.float64)
    if ys.size == 0:
        raise ValueError("climatology needs at least one training target")
    return ecdf_from_samples(ys, spec)
