"""Desk-scale trainable heads and the three training regimes.

* ``rps``       linear softmax head over K bins on pooled features, SGD on mean RPS
* ``hurdle``    per-pixel linear Gamma-Hurdle head, SGD on the uncertainty-weighted pixel loss
* ``multitask`` both heads together on the EMA-normalised sum of the two losses

All gradients are analytic; :func:`grad_check` compares them with central
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from raincast import EPS_DIV, rng as rngmod
from raincast.binning import BinnedCDF, BinSpec, cdf_from_pmf, ecdf_from_samples, make_spec, pmf_from_logits, target_step
from raincast.dataset import split_indices
from raincast.hurdle import (
    FocalConfig,
    HurdleField,
    UncertaintyWeights,
    aggregate_cells,
    blur_adjoint,
    focal_grad,
    focal_loss,
    pixel_loss_terms,
    sigmoid,
)
from raincast.multitask import EmaState, combined_loss, ema_update
from raincast.special import digamma, lgamma
from raincast.scoring import climatology_baseline, rps_grad_logits_batch, rps_values_batch
from raincast.synth import SAT_RATIO, Sample

OBJECTIVES = ("rps", "hurdle", "multitask")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "rps"
    r_max: float = 8.0
    epsilon: float = 0.05
    lr: float | None = None  # overrides both per-head rates when set
    lr_ecdf: float = 0.1
    lr_hurdle: float = 0.01
    lr_log_var: float | None = None  # rate for (s_h, s_g); None uses the hurdle rate
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    patience: int | None = 5
    lambda_agg: float = 1.0
    rho: float = 0.99
    gamma_focus: float = 2.0
    alpha_balance: float = 0.25
    sigma_b: float = 1.0
    log_var_bound: float = 8.0
    grad_clip: float | None = 1.0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        for name in ("lr", "lr_log_var"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive (or None to disable clipping)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 (or None to disable early stopping)")

    @property
    def spec(self) -> BinSpec:
        return make_spec(self.r_max, self.epsilon)

    @property
    def focal(self) -> FocalConfig:
        return FocalConfig(self.gamma_focus, self.alpha_balance)

    def rates(self) -> tuple[float, float]:
        if self.lr is not None:
            return self.lr, self.lr
        return self.lr_ecdf, self.lr_hurdle

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def pool_features(feat) -> np.ndarray:
    """Spatial mean of every (channel, frame) plane, flattened channel-major."""
    f = np.asarray(feat, dtype=np.float64)
    return f.mean(axis=(2, 3)).reshape(-1)


def patch_features(feat) -> np.ndarray:
    """Per satellite pixel feature vectors, shape (h, w, C*F)."""
    f = np.asarray(feat, dtype=np.float64)
    c, fr, h, w = f.shape
    return f.reshape(c * fr, h, w).transpose(1, 2, 0)


def patch_index(n_radar: int, n_sat: int) -> np.ndarray:
    """Satellite row/column enclosing each radar row/column."""
    return np.minimum(np.arange(n_radar) // SAT_RATIO, n_sat - 1)


def _standardizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = x.reshape(-1, x.shape[-1])
    return x.mean(axis=0), np.maximum(x.std(axis=0), 1e-6)


@dataclass
class EcdfModel:
    spec: BinSpec
    weights: np.ndarray  # K x D
    bias: np.ndarray  # K
    feat_mean: np.ndarray
    feat_scale: np.ndarray

    def standardize(self, pooled) -> np.ndarray:
        return (np.asarray(pooled, dtype=np.float64) - self.feat_mean) / self.feat_scale

    def logits(self, pooled) -> np.ndarray:
        return self.standardize(pooled) @ self.weights.T + self.bias

    def copy(self) -> EcdfModel:
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy())

    @classmethod
    def zeros(cls, spec: BinSpec, dim: int) -> EcdfModel:
        return cls(spec, np.zeros((spec.k, dim)), np.zeros(spec.k), np.zeros(dim), np.ones(dim))


def forward_ecdf(m: EcdfModel, feat) -> BinnedCDF:
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape != (m.weights.shape[1],):
        raise ValueError(f"feature vector has shape {feat.shape}, model expects ({m.weights.shape[1]},)")
    return cdf_from_pmf(pmf_from_logits(m.logits(feat), m.spec))


@dataclass
class HurdleModel:
    weights: np.ndarray  # 3 x D, rows -> (l, log alpha, log beta)
    bias: np.ndarray  # 3 x T, per-slot offsets
    log_var: np.ndarray  # (s_h, s_g)
    feat_mean: np.ndarray
    feat_scale: np.ndarray

    def copy(self) -> HurdleModel:
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy(), log_var=self.log_var.copy())

    @property
    def uncertainty(self) -> UncertaintyWeights:
        return UncertaintyWeights(float(self.log_var[0]), float(self.log_var[1]))

    def params(self, patches_std: np.ndarray, height: int, width: int) -> np.ndarray:
        """Raw per-pixel outputs, shape (3, B, T, H, W), for standardised patches (B, h, w, D)."""
        _, h, w, _ = patches_std.shape
        proj = patches_std @ self.weights.T  # B h w 3
        proj = proj[:, patch_index(height, h)][:, :, patch_index(width, w)]
        return proj.transpose(3, 0, 1, 2)[:, :, None] + self.bias[:, None, :, None, None]

    def field(self, feat, height: int, width: int) -> HurdleField:
        x = (patch_features(feat) - self.feat_mean) / self.feat_scale
        theta = self.params(x[None], height, width)[:, 0]
        return HurdleField(theta[0], np.exp(theta[1]), np.exp(theta[2]))


def predict_field(m: HurdleModel, sample: Sample) -> HurdleField:
    _, height, width = sample.cube.shape
    return m.field(sample.features, height, width)


@dataclass
class PatchStats:
    """Per (sample, slot, satellite pixel) sufficient statistics of the smoothed pixel loss.

    With ``back = blur^T(valid)``, the masked sum of a smoothed loss map is
    ``sum(loss * valid * back)``. Pixels sharing one satellite pixel and slot
    share hurdle parameters, so only these weighted sums are needed:
    ``w_dry``/``w_wet`` weight the focal terms, and ``s0``, ``s_logr``, ``s_r``
    carry the wet-pixel weights, ``weight * log r`` and ``weight * r`` for the
    Gamma NLL.
    """

    w_dry: np.ndarray  # B x T x h x w
    w_wet: np.ndarray
    s_logr: np.ndarray
    s_r: np.ndarray
    n_valid: np.ndarray  # B

    @property
    def s0(self) -> np.ndarray:
        return self.w_wet

    def take(self, idx) -> PatchStats:
        return PatchStats(self.w_dry[idx], self.w_wet[idx], self.s_logr[idx], self.s_r[idx], self.n_valid[idx])


def patch_stats(rate, valid, sigma_b: float, h: int, w: int) -> PatchStats:
    rate = np.asarray(rate, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    height, width = rate.shape[-2:]
    vf = valid.astype(np.float64)
    weight = vf * blur_adjoint(vf, sigma_b)
    wet = valid & (rate > 0)
    logr = np.log(np.where(wet, rate, 1.0))
    rows = np.eye(h)[patch_index(height, h)]
    cols = np.eye(w)[patch_index(width, w)]

    def agg(a):
        return np.matmul(np.matmul(rows.T, a), cols)

    w_wet = np.where(wet, weight, 0.0)
    return PatchStats(agg(weight - w_wet), agg(w_wet), agg(w_wet * logr), agg(w_wet * rate),
                      vf.sum(axis=tuple(range(1, vf.ndim))))


@dataclass
class Batch:
    """Stacked, standardised arrays for a set of samples."""

    pooled: np.ndarray  # B x D
    patches: np.ndarray  # B x h x w x D
    rate: np.ndarray  # B x T x H x W
    valid: np.ndarray
    y: np.ndarray
    stats: PatchStats | None = None

    def take(self, idx) -> Batch:
        stats = None if self.stats is None else self.stats.take(idx)
        return Batch(self.pooled[idx], self.patches[idx], self.rate[idx], self.valid[idx], self.y[idx], stats)

    def with_stats(self, sigma_b: float) -> Batch:
        _, h, w, _ = self.patches.shape
        return replace(self, stats=patch_stats(self.rate, self.valid, sigma_b, h, w))

    def __len__(self):
        return len(self.y)


def stack_samples(samples, pooled_norm=None, patch_norm=None) -> Batch:
    shapes = {(s.features.shape, s.cube.shape) for s in samples}
    if len(shapes) != 1:
        raise ValueError("all samples must share feature and cube shapes")
    pooled = np.stack([pool_features(s.features) for s in samples])
    patches = np.stack([patch_features(s.features) for s in samples])
    if pooled_norm is not None:
        pooled = (pooled - pooled_norm[0]) / pooled_norm[1]
    if patch_norm is not None:
        patches = (patches - patch_norm[0]) / patch_norm[1]
    rate = np.stack([np.asarray(s.cube.rate) for s in samples])
    valid = np.stack([np.asarray(s.cube.valid) for s in samples])
    return Batch(pooled, patches, rate, valid, np.array([s.y for s in samples]))


# --- losses and gradients -------------------------------------------------------------


def ecdf_loss_grad(m: EcdfModel, batch: Batch):
    """Mean RPS over the batch and gradients ``(d weights, d bias)``; ``batch.pooled`` is standardised."""
    z = batch.pooled @ m.weights.T + m.bias
    loss = float(np.mean(rps_values_batch(z, batch.y, m.spec)))
    g = rps_grad_logits_batch(z, batch.y, m.spec) / len(batch)
    return loss, g.T @ batch.pooled, g.sum(axis=0)


def _check_finite(theta, alpha, beta) -> None:
    if not (np.all(np.isfinite(theta)) and np.all(alpha > 0) and np.all(beta > 0) and np.all(np.isfinite(alpha))
            and np.all(np.isfinite(beta))):
        raise FloatingPointError("hurdle parameters left the representable range; training diverged "
                                 "(lower the learning rate or enable grad_clip)")


def hurdle_loss_grad(m: HurdleModel, batch: Batch, cfg: TrainConfig):
    """Pixel loss pooled over the batch and gradients ``(d weights, d bias, d log_var)``.

    Uses the per-patch sufficient statistics when ``batch.stats`` is present
    (identical value, far cheaper), else the pixel-level reference.
    """
    if batch.stats is not None:
        return _hurdle_loss_grad_stats(m, batch, cfg)
    return hurdle_loss_grad_pixels(m, batch, cfg)


def _hurdle_loss_grad_stats(m: HurdleModel, batch: Batch, cfg: TrainConfig):
    st = batch.stats
    theta = (batch.patches @ m.weights.T).transpose(3, 0, 1, 2)[:, :, None] + m.bias[:, None, :, None, None]
    l, alpha, beta = theta[0], np.exp(theta[1]), np.exp(theta[2])
    _check_finite(theta, alpha, beta)
    focal = cfg.focal
    n = float(st.n_valid.sum())
    denom = n + EPS_DIV
    s_h, s_g = float(m.log_var[0]), float(m.log_var[1])
    eh, eg = math.exp(-s_h), math.exp(-s_g)

    sum_h = float(np.sum(st.w_wet * focal_loss(l, True, focal) + st.w_dry * focal_loss(l, False, focal)))
    lg_a = lgamma(alpha)
    sum_g = float(np.sum(st.s0 * (lg_a - alpha * theta[2]) - (alpha - 1.0) * st.s_logr + beta * st.s_r))
    value = (eh * sum_h + eg * sum_g + 0.5 * (s_h + s_g) * n) / denom

    d_l = eh / denom * (st.w_wet * focal_grad(l, True, focal) + st.w_dry * focal_grad(l, False, focal))
    d_alpha = eg / denom * (st.s0 * (digamma(alpha) - theta[2]) - st.s_logr)
    d_beta = eg / denom * (st.s_r - st.s0 * alpha / beta)
    g = np.stack([d_l, d_alpha * alpha, d_beta * beta])  # 3 B T h w
    d_w = np.einsum("kbij,bijd->kd", g.sum(axis=2), batch.patches)
    d_b = g.sum(axis=(1, 3, 4))
    d_s = np.array([(-eh * sum_h + 0.5 * n) / denom, (-eg * sum_g + 0.5 * n) / denom])
    return value, d_w, d_b, d_s, (sum_h / n, sum_g / n)


def hurdle_loss_grad_pixels(m: HurdleModel, batch: Batch, cfg: TrainConfig):
    """Pixel-level evaluation of :func:`hurdle_loss_grad` through the full loss maps."""
    _, _, height, width = batch.rate.shape
    theta = m.params(batch.patches, height, width)
    alpha, beta = np.exp(theta[1]), np.exp(theta[2])
    _check_finite(theta, alpha, beta)
    pl = pixel_loss_terms(theta[0], alpha, beta, batch.rate, batch.valid, m.uncertainty, cfg.focal, cfg.sigma_b)
    g = np.stack([pl.d_l, pl.d_alpha * alpha, pl.d_beta * beta])  # 3 B T H W
    _, h, w, _ = batch.patches.shape
    rows = np.eye(h)[patch_index(height, h)]  # H x h
    cols = np.eye(w)[patch_index(width, w)]
    per_patch = np.matmul(np.matmul(rows.T, g.sum(axis=2)), cols)
    d_w = np.einsum("kbij,bijd->kd", per_patch, batch.patches)
    d_b = g.sum(axis=(1, 3, 4))
    return pl.value, d_w, d_b, np.array([pl.d_s_h, pl.d_s_g]), (pl.mean_h, pl.mean_g)


# --- training ------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_rps: float
    val_crps: float


@dataclass
class StepLog:
    step: int
    l_pixel: float
    l_agg: float
    ema_pixel: float
    ema_agg: float
    total: float


@dataclass
class TrainResult:
    cfg: TrainConfig
    ecdf: EcdfModel | None
    hurdle: HurdleModel | None
    metrics: list[EpochMetrics]
    best_epoch: int
    init_val_rps: float
    train_idx: np.ndarray
    val_idx: np.ndarray
    final_ecdf: EcdfModel | None = None
    final_hurdle: HurdleModel | None = None
    steps: list[StepLog] = field(default_factory=list)
    log_var_trace: list[np.ndarray] = field(default_factory=list)


def init_ecdf(spec: BinSpec, train: Batch, norm) -> EcdfModel:
    """Zero weights; bias at the log of the (lightly smoothed) training climatology."""
    clim = climatology_baseline(train.y, spec)
    pmf = np.diff(clim.f, prepend=0.0)
    pmf = (pmf + 1e-3 / spec.k) / (1.0 + 1e-3)
    return EcdfModel(spec, np.zeros((spec.k, train.pooled.shape[1])), np.log(pmf), norm[0], norm[1])


def init_hurdle(train: Batch, norm) -> HurdleModel:
    """Zero weights; per-slot biases at the training wet fraction and an exponential fit to wet rates."""
    _, slots, _, _ = train.rate.shape
    valid = train.valid
    wet = valid & (train.rate > 0)
    frac = np.clip(wet.sum() / max(valid.sum(), 1), 1e-4, 1 - 1e-4)
    mean_wet = float(train.rate[wet].mean()) if wet.any() else 1.0
    bias = np.zeros((3, slots))
    bias[0] = math.log(frac / (1 - frac))
    bias[2] = -math.log(mean_wet)
    return HurdleModel(np.zeros((3, train.patches.shape[-1])), bias, np.zeros(2), norm[0], norm[1])


def ecdf_val_scores(m: EcdfModel, val: Batch) -> tuple[float, float]:
    r = float(np.mean(rps_values_batch(val.pooled @ m.weights.T + m.bias, val.y, m.spec)))
    return r, m.spec.epsilon * r


def hurdle_point_forecast(m: HurdleModel, batch: Batch) -> np.ndarray:
    """Aggregate of the per-pixel expected rates, one value per sample."""
    _, _, height, width = batch.rate.shape
    theta = m.params(batch.patches, height, width)
    mean = sigmoid(theta[0]) * np.exp(theta[1] - theta[2])
    return aggregate_cells(mean, batch.valid)


def hurdle_val_scores(m: HurdleModel, val: Batch, spec: BinSpec) -> tuple[float, float]:
    """RPS/CRPS of point-mass forecasts at the aggregated hurdle mean."""
    yhat = hurdle_point_forecast(m, val)
    total = 0.0
    for yh, y in zip(yhat, val.y):
        r = ecdf_from_samples([yh], spec).f - target_step(float(y), spec)
        total += float(r @ r)
    v = total / len(val)
    return v, spec.epsilon * v


def prepare(samples, cfg: TrainConfig):
    samples = list(samples)
    train_idx, val_idx = split_indices(len(samples), cfg.seed, cfg.val_fraction)
    raw = stack_samples(samples)
    pooled_norm = _standardizer(raw.pooled[train_idx])
    patch_norm = _standardizer(raw.patches[train_idx])
    raw.pooled = (raw.pooled - pooled_norm[0]) / pooled_norm[1]
    raw.patches = (raw.patches - patch_norm[0]) / patch_norm[1]
    if cfg.objective != "rps":
        raw = raw.with_stats(cfg.sigma_b)
    return raw.take(train_idx), raw.take(val_idx), train_idx, val_idx, pooled_norm, patch_norm


def _batches(n: int, cfg: TrainConfig, epoch: int):
    order = rngmod.stream(cfg.seed, rngmod.SHUFFLE, epoch).permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def _fit(cfg: TrainConfig, n_train: int, step: Callable, evaluate: Callable, snapshot: Callable):
    """Shared epoch loop with best-validation-epoch selection (ties keep the earliest)."""
    val_rps, val_crps = evaluate()
    init_val = best_score = val_rps
    best, best_epoch, wait = snapshot(), 0, 0
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        losses = [step(idx) for idx in _batches(n_train, cfg, epoch)]
        val_rps, val_crps = evaluate()
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), val_rps, val_crps))
        if val_rps < best_score:
            best_score, best, best_epoch, wait = val_rps, snapshot(), epoch, 0
        else:
            wait += 1
            if cfg.patience is not None and wait >= cfg.patience:
                break
    return best, best_epoch, init_val, metrics


def train_ecdf(samples, cfg: TrainConfig) -> TrainResult:
    train, val, tr_idx, va_idx, pooled_norm, _ = prepare(samples, cfg)
    lr, _ = cfg.rates()
    m = init_ecdf(cfg.spec, train, pooled_norm)

    def step(idx):
        loss, d_w, d_b = ecdf_loss_grad(m, train.take(idx))
        m.weights -= lr * d_w
        m.bias -= lr * d_b
        return loss

    best, best_epoch, init_val, metrics = _fit(
        cfg, len(train), step, lambda: ecdf_val_scores(m, val), lambda: m.copy()
    )
    return TrainResult(cfg, best, None, metrics, best_epoch, init_val, tr_idx, va_idx, final_ecdf=m)


def clip_scale(grads, max_norm: float | None) -> float:
    """Factor bringing the joint L2 norm of ``grads`` down to ``max_norm`` (1 when within it)."""
    if max_norm is None:
        return 1.0
    norm = float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))
    return 1.0 if norm <= max_norm else max_norm / norm


def _sgd_hurdle(m: HurdleModel, lr: float, scale: float, d_w, d_b, d_s, cfg: TrainConfig):
    # a single heavy-rain batch can produce a huge log-rate gradient; clipping bounds the step
    scale = scale * clip_scale([scale * d_w, scale * d_b, scale * d_s], cfg.grad_clip)
    lr_s = lr if cfg.lr_log_var is None else cfg.lr_log_var
    m.weights -= lr * scale * d_w
    m.bias -= lr * scale * d_b
    m.log_var -= lr_s * scale * d_s
    np.clip(m.log_var, -cfg.log_var_bound, cfg.log_var_bound, out=m.log_var)


def train_hurdle(samples, cfg: TrainConfig) -> TrainResult:
    train, val, tr_idx, va_idx, _, patch_norm = prepare(samples, cfg)
    _, lr = cfg.rates()
    m = init_hurdle(train, patch_norm)
    trace = []

    def step(idx):
        loss, d_w, d_b, d_s, _ = hurdle_loss_grad(m, train.take(idx), cfg)
        _sgd_hurdle(m, lr, 1.0, d_w, d_b, d_s, cfg)
        trace.append(m.log_var.copy())
        return loss

    best, best_epoch, init_val, metrics = _fit(
        cfg, len(train), step, lambda: hurdle_val_scores(m, val, cfg.spec), lambda: m.copy()
    )
    return TrainResult(cfg, None, best, metrics, best_epoch, init_val, tr_idx, va_idx,
                       final_hurdle=m, log_var_trace=trace)


def train_multitask(samples, cfg: TrainConfig) -> TrainResult:
    """Both heads per step on the EMA-normalised combination; the eCDF head is the forecast."""
    train, val, tr_idx, va_idx, pooled_norm, patch_norm = prepare(samples, cfg)
    lr_e, lr_h = cfg.rates()
    em = init_ecdf(cfg.spec, train, pooled_norm)
    hm = init_hurdle(train, patch_norm)
    state = {"pix": EmaState(cfg.rho), "agg": EmaState(cfg.rho)}
    log: list[StepLog] = []
    trace = []

    def step(idx):
        b = train.take(idx)
        l_pix, hw, hb, hs, _ = hurdle_loss_grad(hm, b, cfg)
        l_agg, ew, eb = ecdf_loss_grad(em, b)
        state["pix"] = ema_update(state["pix"], l_pix)
        state["agg"] = ema_update(state["agg"], l_agg)
        c = combined_loss(l_pix, l_agg, state["pix"], state["agg"], cfg.lambda_agg)
        _sgd_hurdle(hm, lr_h, c.d_pixel, hw, hb, hs, cfg)
        em.weights -= lr_e * c.d_agg * ew
        em.bias -= lr_e * c.d_agg * eb
        log.append(StepLog(len(log) + 1, l_pix, l_agg, state["pix"].value, state["agg"].value, c.total))
        trace.append(hm.log_var.copy())
        return c.total

    best, best_epoch, init_val, metrics = _fit(
        cfg, len(train), step, lambda: ecdf_val_scores(em, val), lambda: (em.copy(), hm.copy())
    )
    return TrainResult(cfg, best[0], best[1], metrics, best_epoch, init_val, tr_idx, va_idx,
                       final_ecdf=em, final_hurdle=hm, steps=log, log_var_trace=trace)


def train(samples, cfg: TrainConfig) -> TrainResult:
    return {"rps": train_ecdf, "hurdle": train_hurdle, "multitask": train_multitask}[cfg.objective](samples, cfg)


# --- gradient checking -----------------------------------------------------------------


def _flat_views(objective: str, ecdf: EcdfModel | None, hurdle: HurdleModel | None) -> list[np.ndarray]:
    views = []
    if objective in ("rps", "multitask"):
        views += [ecdf.weights, ecdf.bias]
    if objective in ("hurdle", "multitask"):
        views += [hurdle.weights, hurdle.bias, hurdle.log_var]
    return views


def objective_loss_grad(objective: str, ecdf, hurdle, batch: Batch, cfg: TrainConfig,
                        ema: tuple[float, float] = (1.0, 1.0)):
    """Loss and flattened gradient for one objective; multitask normalisers are the constants ``ema``."""
    if objective == "rps":
        loss, d_w, d_b = ecdf_loss_grad(ecdf, batch)
        return loss, [d_w, d_b]
    if objective == "hurdle":
        loss, d_w, d_b, d_s, _ = hurdle_loss_grad(hurdle, batch, cfg)
        return loss, [d_w, d_b, d_s]
    if objective == "multitask":
        l_pix, hw, hb, hs, _ = hurdle_loss_grad(hurdle, batch, cfg)
        l_agg, ew, eb = ecdf_loss_grad(ecdf, batch)
        c = combined_loss(l_pix, l_agg, EmaState(cfg.rho, ema[0]), EmaState(cfg.rho, ema[1]), cfg.lambda_agg)
        return c.total, [c.d_agg * ew, c.d_agg * eb, c.d_pixel * hw, c.d_pixel * hb, c.d_pixel * hs]
    raise ValueError(f"unknown objective {objective!r}")


def grad_check(objective: str, ecdf, hurdle, batch: Batch, cfg: TrainConfig, n_params: int = 200,
               h: float = 1e-4, seed: int = 0, ema: tuple[float, float] = (1.0, 1.0), floor: float = 1e-6) -> float:
    """Max relative error of analytic vs. central-difference gradients over a random parameter subset.

    The step for parameter ``p`` is ``h * max(1, |p|)``; magnitudes below
    ``floor`` are treated as ``floor`` in the denominator.
    """
    views = _flat_views(objective, ecdf, hurdle)
    _, grads = objective_loss_grad(objective, ecdf, hurdle, batch, cfg, ema)
    sizes = [v.size for v in views]
    total = sum(sizes)
    pick = rngmod.stream(seed, rngmod.SELFTEST, 1).choice(total, size=min(n_params, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in np.sort(pick):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        view, j = views[k].reshape(-1), flat - offsets[k]
        analytic = float(grads[k].reshape(-1)[j])
        orig = view[j]
        step = h * max(1.0, abs(orig))
        view[j] = orig + step
        up, _ = objective_loss_grad(objective, ecdf, hurdle, batch, cfg, ema)
        view[j] = orig - step
        down, _ = objective_loss_grad(objective, ecdf, hurdle, batch, cfg, ema)
        view[j] = orig
        numeric = (up - down) / (2 * step)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
