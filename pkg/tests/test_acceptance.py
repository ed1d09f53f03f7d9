"""Acceptance criteria A1-A9, one PASS/FAIL line each (see the terminal summary)."""

import math
import time
import warnings

import numpy as np
from click.testing import CliRunner
from scipy.integrate import quad
from scipy.special import gammainc as sp_gammainc

from raincast.binning import ClampWarning, PRESETS, make_spec, preset
from raincast.cli import main
from raincast.evaluate import climatology_forecaster, head_forecaster, mean_scores, score_samples
from raincast.hurdle import HurdleField, sample_hurdle
from raincast.modelio import SavedModel
from raincast.moments import GammaParams, LogNormalParams, gamma_cdf, lognormal_cdf, match_gamma, match_lognormal
from raincast.multitask import EmaState, combined_loss, ema_update
from raincast.scoring import aggregate_target, crps, rps
from raincast.selftest import gradient_case, homogeneous_aggregate_cdf, random_cdf, rps_loop, sup_distance
from raincast.synth import SynthConfig, dataset_statistics, dihedral_augment, generate, make_field, tile_deterministic
from raincast.train import TrainConfig, grad_check, train


def test_a1_scoring_oracle(report):
    g = np.random.default_rng(101)
    specs = [make_spec(0.2, 0.05), make_spec(128.0, 1.0), make_spec(8.0, 0.05)]
    assert [s.k for s in specs] == [5, 129, 161]
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        spec = specs[i % 3]
        f = random_cdf(g, spec)
        # a share of targets sits exactly on bin values to exercise ties
        y = float(g.integers(spec.k) * spec.epsilon) if i % 5 == 0 else float(g.uniform(0, spec.r_max))
        ref = rps_loop(f.f, y, spec.epsilon)
        worst = max(worst, abs(rps(f, y) - ref), abs(crps(f, y) - spec.epsilon * ref))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 5
    assert report("A1", ok, f"rps/crps vs loop oracle, 1000 pairs: max_err={worst:.2e} (tol 1e-10), {dt:.2f}s (<5s)")


def test_a2_gradient_suite(report):
    t0 = time.perf_counter()
    worst = {"rps": 0.0, "hurdle": 0.0, "multitask": 0.0}
    for i in range(100):
        obj = ("rps", "hurdle", "multitask")[i % 3]
        ecdf, hm, batch, cfg, ema = gradient_case(obj, 5000 + i, pixel_path=i % 7 == 0)
        worst[obj] = max(worst[obj], grad_check(obj, ecdf, hm, batch, cfg, n_params=30, seed=i, ema=ema))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and dt < 30
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert report("A2", ok, f"100 gradient configs: max rel err {detail} (tol 1e-4), {dt:.1f}s (<30s)")


def test_a3_learning_skill(report):
    t0 = time.perf_counter()
    samples = generate(SynthConfig(seed=2024, snr=10.0), 512, threads=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        re = train(samples, TrainConfig(objective="rps", seed=0))
        rh = train(samples, TrainConfig(objective="hurdle", seed=0, epochs=60, patience=None))
        spec = re.cfg.spec
        val = [samples[i] for i in re.val_idx]
        clim = mean_scores(score_samples(val, climatology_forecaster([samples[i].y for i in re.train_idx], spec)))[1]
        e = mean_scores(score_samples(val, head_forecaster("ecdf", SavedModel(re.cfg, spec, re.ecdf, None, 0)), 4))[1]
        hm = SavedModel(rh.cfg, spec, None, rh.hurdle, 0)
        h = mean_scores(score_samples(val, head_forecaster("hurdle-samples", hm, 200, 0), 4))[1]
    dt = time.perf_counter() - t0
    ok = e <= 0.9 * clim and h <= clim and dt < 120
    assert report("A3", ok, f"val CRPS climatology={clim:.4f} ecdf={e / clim:.3f}x (<=0.9) "
                            f"hurdle-samples={h / clim:.3f}x (<=1.0), {dt:.0f}s (<120s)")


def test_a4_calibration(report):
    stats = dataset_statistics(generate(SynthConfig(), 256, threads=4))
    zi = stats["Zero-Inflation (%)"]["p50"]
    mean = stats["Aggregate Target (mm)"]["mean"]
    ok = abs(zi - 99.87) <= 2.0 and abs(mean - 0.3434) <= 0.3 * 0.3434
    assert report("A4", ok, f"n=256: zero-inflation median={zi:.4f}% (99.87+-2), target mean={mean:.4f} mm (0.3434+-30%)")


def test_a5_presets(report):
    table2 = {(128.0, 1.0): 129, (512.0, 4.0): 129, (64.0, 0.01): 6401, (128.0, 0.005): 25601}
    got = {pair: make_spec(*pair).k for pair in table2}
    named = {name: preset(name).k for name in PRESETS}
    ok = got == table2 and {129, 6401, 25601} <= set(named.values())
    assert report("A5", ok, "K " + ", ".join(f"{r:g}/{e:g}->{k}" for (r, e), k in got.items()))


def _gamma_pdf(t, a, b):
    return math.exp(a * math.log(b) + (a - 1) * math.log(t) - b * t - math.lgamma(a))


def _lognormal_pdf(t, mu, s2):
    return math.exp(-((math.log(t) - mu) ** 2) / (2 * s2)) / (t * math.sqrt(2 * math.pi * s2))


def test_a6_distributions(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(606)
    cdf_err = 0.0
    for _ in range(200):
        a, b = float(g.uniform(0.3, 30)), float(g.uniform(0.1, 5))
        x = float(g.gamma(a, 1 / b))
        ref = quad(_gamma_pdf, 0, x, args=(a, b), epsabs=1e-14, epsrel=1e-13, limit=400)[0]
        cdf_err = max(cdf_err, abs(float(gamma_cdf(x, GammaParams(a, b))) - ref))
        mu, s2 = float(g.uniform(-3, 3)), float(g.uniform(0.01, 3))
        x = float(math.exp(mu + g.normal() * math.sqrt(s2)))
        ref = quad(_lognormal_pdf, 0, x, args=(mu, s2), epsabs=1e-14, epsrel=1e-13, limit=400)[0]
        cdf_err = max(cdf_err, abs(float(lognormal_cdf(x, LogNormalParams(mu, s2))) - ref))
    trip = 0.0
    for _ in range(200):
        m, v = float(g.uniform(1e-3, 20)), float(g.uniform(1e-3, 20))
        for p in (match_lognormal(m, v), match_gamma(m, v)):
            trip = max(trip, abs(p.mean() - m) / m, abs(p.var() - v) / v)
    mc = 0.0
    for k, (p, alpha, beta) in enumerate(((0.3, 0.8, 1.5), (0.05, 2.0, 0.5), (0.7, 0.4, 3.0))):
        field = HurdleField(np.full((16, 1, 1), math.log(p / (1 - p))), np.full((16, 1, 1), alpha),
                            np.full((16, 1, 1), beta))
        draws = sample_hurdle(field, 1_000_000, 700 + k, threads=4)
        mc = max(mc, sup_distance(draws, lambda t: homogeneous_aggregate_cdf(t, p, alpha, beta, inc=sp_gammainc)))
    dt = time.perf_counter() - t0
    ok = cdf_err <= 1e-8 and trip <= 1e-9 and mc <= 0.005 and dt < 60
    assert report("A6", ok, f"cdf vs quadrature={cdf_err:.1e} (1e-8), round trip={trip:.1e} (1e-9), "
                            f"MC sup-norm={mc:.4f} (0.005), {dt:.1f}s (<60s)")


def test_a7_multitask_fixed_point(report):
    worst = 0.0
    for lp, la, lam in ((0.37, 12.0, 1.0), (5.0, 0.02, 0.25), (1e3, 3.0, 2.0)):
        sp, sa = EmaState(), EmaState()
        for _ in range(500):
            sp, sa = ema_update(sp, lp), ema_update(sa, la)
            c = combined_loss(lp, la, sp, sa, lam)
        worst = max(worst, abs(c.pixel_term - 1), abs(c.agg_term - 1), abs(c.total - (1 + lam)))
    assert report("A7", worst <= 1e-6, f"normalised terms and total after 500 constant steps: max dev={worst:.1e} (1e-6)")


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_a8_determinism(report, tmp_path):
    runner = CliRunner()

    def once(tag, threads):
        root = tmp_path / tag
        outs = []
        for args in (
            ["selftest"],
            ["gen", "--n", "24", "--seed", "5", "--out", root / "data"],
            ["train", "--objective", "multitask", "--epochs", "2", "--data", root / "data", "--out", root / "mt"],
            ["train", "--objective", "hurdle", "--epochs", "2", "--data", root / "data", "--out", root / "hu"],
            ["score", "--model", root / "hu", "--data", root / "data", "--n-samples", "100", "--out", root / "s.csv"],
            ["score", "--model", root / "mt", "--data", root / "data", "--out", root / "t.csv"],
        ):
            r = runner.invoke(main, [str(a) for a in args] + ["--threads", str(threads)])
            assert r.exit_code == 0, r.output
            outs.append(r.output.replace(str(root), "<root>"))
        return outs, _tree(root)

    runs = [once("a", 1), once("b", 1), once("c", 4), once("d", 4)]
    ok = all(r == runs[0] for r in runs[1:])
    n_files = len(runs[0][1])
    assert report("A8", ok, f"selftest/gen/train/score stdout and {n_files} files identical over 2 runs x threads {{1,4}}")


def test_a9_augmentation(report):
    samples = generate(SynthConfig(zero_inflation_median=0.95, seed=9), 100)
    g = np.random.default_rng(909)
    worst = 0.0
    for s in samples:
        for e in g.permutation(8)[:3]:
            worst = max(worst, abs(aggregate_target(dihedral_augment(s, int(e)).cube) - s.y))
    uncovered = 0
    for h, w in ((32, 32), (40, 70), (80, 80), (33, 100)):
        src = make_field(SynthConfig(), g, h, w, "src")
        covered = np.zeros((h, w), bool)
        for t in tile_deterministic(src):
            r0, c0 = (int(v) for v in t.sample_id.rsplit("@", 1)[1].split(","))
            covered[r0:r0 + 32, c0:c0 + 32] = True
        uncovered += int((~covered).sum())
    ok = worst <= 1e-12 and uncovered == 0
    assert report("A9", ok, f"dihedral target change={worst:.1e} (1e-12) on 100 samples, uncovered pixels={uncovered}")
