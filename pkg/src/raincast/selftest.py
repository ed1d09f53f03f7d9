"""Built-in oracle, gradient and invariant checks behind the ``selftest`` command.

Every check draws its inputs from ``stream(seed, SELFTEST, k)`` and reports
its worst error against a fixed tolerance, so the report is byte-identical
across runs and thread counts.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from raincast import rng as rngmod
from raincast.binning import BinnedCDF, make_spec, pmf_from_logits, cdf_from_pmf, target_step
from raincast.hurdle import HurdleField, sample_hurdle
from raincast.moments import gamma_cdf_branches, GammaParams, match_gamma, match_lognormal
from raincast.multitask import EmaState, combined_loss, ema_update
from raincast.scoring import aggregate_target, crps, rps
from raincast.special import digamma, erf, gammainc, lgamma
from raincast.synth import SynthConfig, dihedral_augment, generate_one, tile_deterministic
from raincast.tensorio import read_tensor, write_tensor
from raincast.train import Batch, EcdfModel, HurdleModel, TrainConfig, grad_check

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        return f"{self.name:<24} {'PASS' if self.passed else 'FAIL'}  max_err={self.error:.3e}  tol={self.tol:.0e}"


def rps_loop(f, y: float, eps: float) -> float:
    """RPS written as the plain sum over bins."""
    total = 0.0
    for k in range(len(f)):
        step = 1.0 if k * eps >= y else 0.0
        total += (f[k] - step) ** 2
    return total


def random_cdf(g: np.random.Generator, spec) -> BinnedCDF:
    z = g.normal(scale=3.0, size=spec.k)
    return cdf_from_pmf(pmf_from_logits(z, spec))


def homogeneous_aggregate_cdf(t, p: float, alpha: float, beta: float, slots: int = 16, inc=gammainc) -> np.ndarray:
    """Exact CDF of ``(1/4) * sum`` of ``slots`` iid Bernoulli(p) x Gamma(alpha, beta) cells.

    With ``k`` wet cells the sum is Gamma(k alpha, beta), so the aggregate is a
    binomial mixture of Gamma CDFs evaluated at ``4 t``. ``inc`` is the
    regularized lower incomplete gamma function to use.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for k in range(slots + 1):
        w = math.comb(slots, k) * p ** k * (1 - p) ** (slots - k)
        out += w * (np.ones_like(t) if k == 0 else inc(k * alpha, beta * 4.0 * np.maximum(t, 0.0)))
    return np.where(t < 0, 0.0, out)


def sup_distance(draws, cdf) -> float:
    """Kolmogorov distance between the empirical CDF of ``draws`` and ``cdf``.

    Both sides are compared at every distinct draw and just below it, so an
    atom (the dry mass at zero) is measured correctly.
    """
    x = np.sort(np.asarray(draws))
    n = x.size
    vals, first = np.unique(x, return_index=True)
    last = np.append(first[1:], n)
    f = cdf(vals)
    f_left = cdf(np.nextafter(vals, -np.inf))
    return float(max(np.max(np.abs(last / n - f)), np.max(np.abs(first / n - f_left))))


def gradient_case(objective: str, seed: int, pixel_path: bool = False):
    """Random models and batch for a gradient check; returns ``(ecdf, hurdle, batch, cfg, ema)``.

    Sizes, bin grid, focal parameters, blur width and all parameters are drawn
    from ``stream(seed, SELFTEST, 100)``. Rates are about 40 % wet so both
    hurdle branches contribute.
    """
    g = rngmod.stream(seed, rngmod.SELFTEST, 100)
    b = int(g.integers(2, 5))
    height, width = int(g.integers(6, 19)), int(g.integers(6, 19))
    h, w = -(-height // 6), -(-width // 6)
    d = int(g.integers(2, 6))
    r_max, eps = [(2.0, 0.5), (8.0, 0.05), (4.0, 0.125)][int(g.integers(3))]
    cfg = TrainConfig(
        objective=objective, r_max=r_max, epsilon=eps,
        gamma_focus=float(g.uniform(0.0, 3.0)), alpha_balance=float(g.uniform(0.1, 0.9)),
        sigma_b=float(g.uniform(0.5, 2.0)), lambda_agg=float(g.uniform(0.2, 2.0)),
    )
    spec = cfg.spec
    rate = np.where(g.random((b, 16, height, width)) < 0.4, g.gamma(1.5, 0.5, (b, 16, height, width)), 0.0)
    valid = g.random((b, 16, height, width)) > 0.15
    y = np.array([aggregate_target_arrays(rate[i], valid[i]) for i in range(b)])
    batch = Batch(g.normal(size=(b, d)), g.normal(size=(b, h, w, d)), rate, valid, np.minimum(y, r_max))
    if not pixel_path:
        batch = batch.with_stats(cfg.sigma_b)
    ecdf = EcdfModel(spec, g.normal(scale=0.5, size=(spec.k, d)), g.normal(size=spec.k), np.zeros(d), np.ones(d))
    hurdle = HurdleModel(g.normal(scale=0.3, size=(3, d)), g.normal(scale=0.5, size=(3, 16)),
                         g.normal(scale=0.5, size=2), np.zeros(d), np.ones(d))
    ema = (float(g.uniform(0.5, 2.0)), float(g.uniform(0.5, 2.0)))
    return ecdf, hurdle, batch, cfg, ema


def aggregate_target_arrays(rate, valid) -> float:
    vf = valid.astype(np.float64)
    slot = (rate * vf).sum(axis=(1, 2)) / np.maximum(vf.sum(axis=(1, 2)), 1.0)
    return float(slot.sum() / 4.0)


# --- checks -------------------------------------------------------------------------------


def check_rps(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 1)
    worst = 0.0
    for k in (5, 129, 161):
        spec = make_spec((k - 1) * 0.05, 0.05)
        for _ in range(50):
            f = random_cdf(g, spec)
            y = float(g.uniform(0, spec.r_max))
            worst = max(worst, abs(rps(f, y) - rps_loop(f.f, y, spec.epsilon)))
            worst = max(worst, abs(crps(f, y) - spec.epsilon * rps_loop(f.f, y, spec.epsilon)))
    return CheckResult("rps-loop-oracle", worst, 1e-10)


def check_gradients(seed: int, objective: str) -> CheckResult:
    worst = 0.0
    for case in range(3):
        ecdf, hurdle, batch, cfg, ema = gradient_case(objective, seed * 1000 + case, pixel_path=case == 2)
        worst = max(worst, grad_check(objective, ecdf, hurdle, batch, cfg, n_params=40, seed=seed, ema=ema))
    return CheckResult(f"grad-{objective}", worst, 1e-4)


def check_special(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 3)
    x = np.concatenate([g.uniform(0.01, 30.0, 200), [0.5, 1.0, 2.0, 10.5]])
    err = max(abs(float(lgamma(v)) - math.lgamma(v)) / max(1.0, abs(math.lgamma(v))) for v in x)
    # digamma: recurrence and the value at 1
    err = max(err, float(np.max(np.abs(digamma(x + 1) - digamma(x) - 1.0 / x) * x)))
    err = max(err, abs(float(digamma(1.0)) + EULER_GAMMA))
    t = g.uniform(-6.0, 6.0, 200)
    err = max(err, max(abs(float(erf(v)) - math.erf(v)) for v in t))
    return CheckResult("special-functions", err, 1e-12)


def check_gamma_branches(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 4)
    worst = 0.0
    for _ in range(50):
        p = GammaParams(float(g.uniform(0.2, 40.0)), float(g.uniform(0.1, 5.0)))
        x = (p.alpha + 1.0) / p.beta * g.uniform(0.8, 1.2, 5)
        series, frac = gamma_cdf_branches(x, p)
        worst = max(worst, float(np.max(np.abs(series - frac))))
    return CheckResult("gamma-cdf-branches", worst, 1e-9)


def check_moments(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 5)
    worst = 0.0
    for _ in range(100):
        m, v = float(g.uniform(0.01, 10.0)), float(g.uniform(0.01, 10.0))
        for p in (match_lognormal(m, v), match_gamma(m, v)):
            worst = max(worst, abs(p.mean() - m) / m, abs(p.var() - v) / v)
    return CheckResult("moment-roundtrip", worst, 1e-9)


def check_ema(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 6)
    lp, la, lam = float(g.uniform(0.1, 10.0)), float(g.uniform(0.1, 10.0)), float(g.uniform(0.1, 3.0))
    sp, sa = EmaState(), EmaState()
    for _ in range(500):
        sp, sa = ema_update(sp, lp), ema_update(sa, la)
        c = combined_loss(lp, la, sp, sa, lam)
    err = max(abs(c.pixel_term - 1.0), abs(c.agg_term - 1.0), abs(c.total - (1.0 + lam)))
    return CheckResult("ema-fixed-point", err, 1e-6)


def check_augmentation(seed: int) -> CheckResult:
    cfg = SynthConfig(height=24, width=24, seed=seed, zero_inflation_median=0.95)
    worst = 0.0
    for i in range(4):
        s = generate_one(cfg, i)
        for e in range(8):
            worst = max(worst, abs(aggregate_target(dihedral_augment(s, e).cube) - s.y))
    return CheckResult("dihedral-invariance", worst, 1e-12)


def check_tiling(seed: int) -> CheckResult:
    s = generate_one(SynthConfig(height=40, width=70, seed=seed), 0)
    covered = np.zeros(s.cube.shape[1:], dtype=bool)
    for t in tile_deterministic(s, crop=32):
        r0, c0 = (int(v) for v in t.sample_id.rsplit("@", 1)[1].split(","))
        covered[r0:r0 + 32, c0:c0 + 32] = True
    return CheckResult("tile-coverage", float((~covered).sum()), 0.0)


def check_tensorio(seed: int) -> CheckResult:
    g = rngmod.stream(seed, rngmod.SELFTEST, 9)
    a = g.normal(size=(3, 4, 5)).astype(np.float32).astype(np.float64)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "a.bin"
        write_tensor(a, p)
        b = read_tensor(p)
    return CheckResult("tensorio-roundtrip", float(np.max(np.abs(a - b))), 0.0)


def check_sampler(seed: int, threads: int = 1) -> CheckResult:
    p, alpha, beta = 0.3, 0.8, 1.5
    field = HurdleField(np.full((16, 1, 1), math.log(p / (1 - p))), np.full((16, 1, 1), alpha), np.full((16, 1, 1), beta))
    draws = sample_hurdle(field, 20000, rngmod.derive_seed(seed, rngmod.SELFTEST, 10), threads=threads)
    # DKW bound at n = 20000 and failure probability 1e-6
    return CheckResult("hurdle-sampler-mixture", sup_distance(draws, lambda t: homogeneous_aggregate_cdf(t, p, alpha, beta)),
                       0.02)


def check_target_step(seed: int) -> CheckResult:
    spec = make_spec(2.0, 0.5)
    f = BinnedCDF(spec, target_step(1.0, spec))
    return CheckResult("oracle-forecast-zero", abs(rps(f, 1.0)) + abs(crps(f, 1.0)), 0.0)


def run_selftest(seed: int = 0, threads: int = 1) -> list[CheckResult]:
    return [
        check_rps(seed),
        check_target_step(seed),
        check_gradients(seed, "rps"),
        check_gradients(seed, "hurdle"),
        check_gradients(seed, "multitask"),
        check_special(seed),
        check_gamma_branches(seed),
        check_moments(seed),
        check_ema(seed),
        check_augmentation(seed),
        check_tiling(seed),
        check_tensorio(seed),
        check_sampler(seed, threads),
    ]
