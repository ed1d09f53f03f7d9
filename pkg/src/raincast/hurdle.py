"""Per-pixel Gamma-Hurdle head: focal hurdle loss, Gamma NLL, Gaussian
smoothing of loss maps, uncertainty-weighted combination, expected value and
Bernoulli-Gamma sampling into aggregate eCDFs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from raincast import EPS_DIV, rng as rngmod
from raincast.binning import BinnedCDF, BinSpec, ecdf_from_samples, soft_ecdf_from_samples
from raincast.scoring import SLOTS_PER_HOUR
from raincast.special import digamma, lgamma
from raincast.tensorio import read_json, read_tensor, write_json, write_tensor

SAMPLE_CHUNK = 64


@dataclass(frozen=True)
class FocalConfig:
    gamma_focus: float = 2.0
    alpha_balance: float = 0.25

    def __post_init__(self):
        if self.gamma_focus < 0:
            raise ValueError("gamma_focus must be >= 0")
        if not 0 < self.alpha_balance < 1:
            raise ValueError("alpha_balance must lie in (0, 1)")


@dataclass(frozen=True)
class UncertaintyWeights:
    s_h: float = 0.0
    s_g: float = 0.0


@dataclass(frozen=True)
class HurdleField:
    """Hurdle logits ``l`` and Gamma shape/rate per pixel, all T x H x W."""

    l: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.float64) for a in (self.l, self.alpha, self.beta)]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape):
            raise ValueError("l, alpha and beta must share one shape")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValueError("hurdle parameters must be finite")
        if np.any(arrs[1] <= 0) or np.any(arrs[2] <= 0):
            raise ValueError("alpha and beta must be strictly positive")
        for name, a in zip(("l", "alpha", "beta"), arrs):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def shape(self):
        return self.l.shape


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def _focal_parts(l, is_rain, cfg: FocalConfig):
    l = np.asarray(l, dtype=np.float64)
    rain = np.asarray(is_rain, dtype=bool)
    sign = np.where(rain, 1.0, -1.0)
    alpha_t = np.where(rain, cfg.alpha_balance, 1.0 - cfg.alpha_balance)
    u = sign * l
    logq = log_sigmoid(u)
    # sigmoid(-u) = sigmoid(u) * exp(-u), kept in log space for accuracy at both tails
    return sign, alpha_t, np.exp(logq), np.exp(logq - u), logq


def focal_loss(l, is_rain, cfg: FocalConfig = FocalConfig()):
    """``-alpha_t (1 - p_t)^gamma log p_t`` with ``p_t`` the probability of the observed class."""
    _, alpha_t, _, omq, logq = _focal_parts(l, is_rain, cfg)
    return -alpha_t * omq**cfg.gamma_focus * logq


def focal_grad(l, is_rain, cfg: FocalConfig = FocalConfig()):
    """Derivative of :func:`focal_loss` with respect to the logit."""
    sign, alpha_t, q, omq, logq = _focal_parts(l, is_rain, cfg)
    return sign * alpha_t * omq**cfg.gamma_focus * (cfg.gamma_focus * q * logq - omq)


def gamma_nll(r, alpha, beta):
    """Negative log density of Gamma(shape ``alpha``, rate ``beta``) at ``r > 0``."""
    r, alpha, beta = (np.asarray(a, dtype=np.float64) for a in (r, alpha, beta))
    if np.any(~(r > 0)) or np.any(~(alpha > 0)) or np.any(~(beta > 0)):
        raise ValueError("gamma_nll needs r, alpha, beta > 0")
    return -(alpha * np.log(beta) - lgamma(alpha) + (alpha - 1.0) * np.log(r) - beta * r)


def gamma_nll_grad(r, alpha, beta):
    """``(d/d alpha, d/d beta)`` of :func:`gamma_nll`."""
    r, alpha, beta = (np.asarray(a, dtype=np.float64) for a in (r, alpha, beta))
    return digamma(alpha) - np.log(beta) - np.log(r), r - alpha / beta


def gaussian_kernel(sigma_b: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma_b)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma_b) ** 2)
    return w / w.sum()


def _reflect(i: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * n - 2
    i %= period
    return period - i if i >= n else i


def blur_matrix(n: int, sigma_b: float) -> np.ndarray:
    """1-D Gaussian smoothing with reflect padding (``d c b | a b c d | c b a``) as an n x n matrix."""
    if sigma_b < 0:
        raise ValueError("sigma_b must be >= 0")
    if sigma_b == 0:
        return np.eye(n)
    w = gaussian_kernel(sigma_b)
    radius = (w.size - 1) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for k, wk in enumerate(w):
            m[i, _reflect(i + k - radius, n)] += wk
    return m


def gaussian_blur2d(field, sigma_b: float):
    """Separable Gaussian blur over the last two axes; ``sigma_b = 0`` is the identity."""
    x = np.asarray(field, dtype=np.float64)
    if sigma_b < 0:
        raise ValueError("sigma_b must be >= 0")
    if sigma_b == 0:
        return x.copy()
    mh = blur_matrix(x.shape[-2], sigma_b)
    mw = blur_matrix(x.shape[-1], sigma_b)
    return np.matmul(np.matmul(mh, x), mw.T)


def blur_adjoint(grad, sigma_b: float):
    """Transpose of :func:`gaussian_blur2d`, used to pull gradients back through the blur."""
    g = np.asarray(grad, dtype=np.float64)
    if sigma_b == 0:
        return g.copy()
    mh = blur_matrix(g.shape[-2], sigma_b)
    mw = blur_matrix(g.shape[-1], sigma_b)
    return np.matmul(np.matmul(mh.T, g), mw)


class PixelLoss(NamedTuple):
    value: float
    d_l: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray
    d_s_h: float
    d_s_g: float
    mean_h: float  # valid-mean of the smoothed hurdle loss
    mean_g: float


def pixel_loss_terms(l, alpha, beta, rate, valid, w: UncertaintyWeights, cfg: FocalConfig = FocalConfig(),
                     sigma_b: float = 1.0) -> PixelLoss:
    """Uncertainty-weighted Gamma-Hurdle loss and its gradients.

    Arrays share a shape ``(..., H, W)``; every leading axis (batch, time) is
    smoothed independently and pooled in the valid-pixel average. Losses at
    invalid pixels are zeroed before smoothing so unknown rates never leak
    into valid neighbours.
    """
    l, alpha, beta, rate = (np.asarray(a, dtype=np.float64) for a in (l, alpha, beta, rate))
    valid = np.asarray(valid, dtype=bool)
    n_valid = valid.sum()
    if n_valid == 0:
        raise ValueError("pixel loss needs at least one valid pixel")
    vf = valid.astype(np.float64)
    wet = valid & (rate > 0)
    idx = np.nonzero(wet)
    r_wet, a_wet, b_wet = rate[idx], alpha[idx], beta[idx]

    sign, alpha_t, q, omq, logq = _focal_parts(l, wet, cfg)
    mod = omq**cfg.gamma_focus
    lh = -alpha_t * mod * logq * vf
    lg = np.zeros(l.shape)
    lg[idx] = gamma_nll(r_wet, a_wet, b_wet)
    sh = gaussian_blur2d(lh, sigma_b)
    sg = gaussian_blur2d(lg, sigma_b)

    denom = n_valid + EPS_DIV
    eh, eg = math.exp(-w.s_h), math.exp(-w.s_g)
    sum_h = float(np.sum(sh * vf))
    sum_g = float(np.sum(sg * vf))
    value = (eh * sum_h + eg * sum_g + 0.5 * (w.s_h + w.s_g) * n_valid) / denom

    back = blur_adjoint(vf, sigma_b) / denom
    d_l = eh * back * vf * sign * alpha_t * mod * (cfg.gamma_focus * q * logq - omq)
    da_g, db_g = gamma_nll_grad(r_wet, a_wet, b_wet)
    d_alpha = np.zeros(l.shape)
    d_beta = np.zeros(l.shape)
    d_alpha[idx] = eg * back[idx] * da_g
    d_beta[idx] = eg * back[idx] * db_g
    d_s_h = (-eh * sum_h + 0.5 * n_valid) / denom
    d_s_g = (-eg * sum_g + 0.5 * n_valid) / denom
    return PixelLoss(value, d_l, d_alpha, d_beta, d_s_h, d_s_g, sum_h / n_valid, sum_g / n_valid)


def pixel_loss(field: HurdleField, cube, w: UncertaintyWeights = UncertaintyWeights(),
               cfg: FocalConfig = FocalConfig(), sigma_b: float = 1.0) -> float:
    if field.shape != cube.shape:
        raise ValueError(f"field {field.shape} and cube {cube.shape} differ in shape")
    return pixel_loss_terms(field.l, field.alpha, field.beta, cube.rate, cube.valid, w, cfg, sigma_b).value


def hurdle_mean(field: HurdleField) -> np.ndarray:
    """Expected rain rate per pixel: rain probability times the Gamma mean."""
    return sigmoid(field.l) * (field.alpha / field.beta)


def aggregate_cells(values, valid=None) -> np.ndarray:
    """Four-hour aggregate over the last three axes (T, H, W) of ``values``."""
    v = np.asarray(values, dtype=np.float64)
    if valid is None:
        return v.mean(axis=(-2, -1)).sum(axis=-1) / SLOTS_PER_HOUR
    vf = np.asarray(valid, dtype=np.float64)
    per_slot = (v * vf).sum(axis=(-2, -1)) / vf.sum(axis=(-2, -1))
    return per_slot.sum(axis=-1) / SLOTS_PER_HOUR


def _sample_chunk(field: HurdleField, valid, seed: int, chunk: int, count: int) -> np.ndarray:
    g = rngmod.stream(seed, rngmod.HURDLE, chunk)
    shape = (count,) + field.shape
    p = sigmoid(field.l)
    wet = g.random(shape) < p
    idx = np.nonzero(wet)
    cube = np.zeros(shape)
    if idx[0].size:
        a = field.alpha[idx[1:]]
        b = field.beta[idx[1:]]
        cube[idx] = rngmod.gamma_mt(g, a, b)
    return aggregate_cells(cube, valid)


def sample_hurdle(field: HurdleField, n: int, seed: int, valid=None, threads: int = 1) -> np.ndarray:
    """Draw ``n`` aggregate rainfall samples from independent per-pixel Bernoulli-Gamma cells.

    Draws are generated in fixed chunks of ``SAMPLE_CHUNK``, each from its own
    derived stream, so the output is identical for any ``threads``.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    if field.shape[0] != 16:
        raise ValueError("aggregate sampling needs a 16-slot field")
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != field.shape:
            raise ValueError("mask shape does not match field")
    chunks = [(c, min(SAMPLE_CHUNK, n - c * SAMPLE_CHUNK)) for c in range(math.ceil(n / SAMPLE_CHUNK))]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda cc: _sample_chunk(field, valid, seed, *cc), chunks))
    else:
        parts = [_sample_chunk(field, valid, seed, c, k) for c, k in chunks]
    return np.concatenate(parts)


def hurdle_ecdf(field: HurdleField, spec: BinSpec, n: int, seed: int, tau: float = 0.0,
                valid=None, threads: int = 1) -> BinnedCDF:
    """Aggregate-rainfall eCDF from hurdle samples; ``tau = 0`` selects hard binning."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    samples = sample_hurdle(field, n, seed, valid, threads)
    if tau == 0:
        return ecdf_from_samples(samples, spec)
    return soft_ecdf_from_samples(samples, spec, tau)


def write_field(field: HurdleField, stem) -> None:
    """Write ``stem.l``, ``stem.alpha``, ``stem.beta`` and the ``stem.json`` manifest."""
    stem = Path(stem)
    files = {}
    for name in ("l", "alpha", "beta"):
        p = stem.with_name(f"{stem.name}.{name}")
        write_tensor(getattr(field, name), p)
        files[name] = p.name
    write_json({"shape": list(field.shape), "files": files}, stem.with_name(stem.name + ".json"))


def read_field(stem) -> HurdleField:
    stem = Path(stem)
    meta = read_json(stem.with_name(stem.name + ".json"))
    parts = {k: read_tensor(stem.with_name(v)) for k, v in meta["files"].items()}
    return HurdleField(parts["l"], parts["alpha"], parts["beta"])
