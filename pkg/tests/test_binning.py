import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from raincast.binning import (
    PRESETS,
    BinnedCDF,
    BinnedPMF,
    ClampWarning,
    cdf_from_pmf,
    clamp_count,
    ecdf_from_samples,
    make_spec,
    pmf_from_logits,
    preset,
    read_cdf,
    soft_ecdf_from_samples,
    soft_ecdf_grad,
    target_cdf,
    write_cdf,
)

SPEC4 = make_spec(4.0, 1.0)
SPEC2 = make_spec(2.0, 1.0)


@pytest.mark.parametrize("r_max, eps, k", [(128, 0.005, 25601), (128, 1.0, 129), (64, 0.01, 6401), (8, 0.05, 161)])
def test_make_spec_bin_counts(r_max, eps, k):
    spec = make_spec(r_max, eps)
    assert spec.k == k
    assert spec.values[0] == 0.0
    assert spec.values[-1] == pytest.approx(r_max)


def test_make_spec_rejects_bad_input():
    with pytest.raises(ValueError):
        make_spec(1.0, 0.3)
    with pytest.raises(ValueError):
        make_spec(0.0, 0.1)
    with pytest.raises(ValueError):
        make_spec(1.0, -0.1)


def test_presets():
    assert {name: preset(name).k for name in PRESETS} == {
        "desk": 161, "dino-coarse": 129, "dino-fine": 25601, "unet-v4": 129, "unet-v10": 6401,
    }
    with pytest.raises(ValueError):
        preset("nope")


def test_uniform_logits():
    pmf = pmf_from_logits(np.full(7, 3.3), make_spec(6.0, 1.0))
    assert np.allclose(pmf.p, 1 / 7, atol=1e-15)


def test_softmax_against_extended_precision():
    # e^10 / (e^10 + 2) and 1 / (e^10 + 2) at 50 digits
    pmf = pmf_from_logits([10.0, 0.0, 0.0], SPEC2)
    assert pmf.p[0] == pytest.approx(0.99990920838434097818, abs=1e-15)
    assert pmf.p[1] == pytest.approx(0.000045395807829510909425, rel=1e-12)


def test_softmax_large_logits_stable():
    pmf = pmf_from_logits([1000.0, 999.0, -1000.0], SPEC2)
    assert np.all(np.isfinite(pmf.p))
    assert pmf.p.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
def test_non_finite_logit_rejected(bad):
    with pytest.raises(ValueError):
        pmf_from_logits([0.0, bad, 1.0], SPEC2)


def test_cdf_point_mass_and_uniform():
    assert np.array_equal(cdf_from_pmf(BinnedPMF(SPEC4, np.array([0, 0, 1.0, 0, 0]))).f, [0, 0, 1, 1, 1])
    assert np.allclose(cdf_from_pmf(BinnedPMF(SPEC4, np.full(5, 0.2))).f, [0.2, 0.4, 0.6, 0.8, 1.0], atol=1e-15)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=60))
def test_cdf_matches_prefix_sum_and_invariants(z):
    spec = make_spec(len(z) - 1.0, 1.0)
    pmf = pmf_from_logits(z, spec)
    assert pmf.p.sum() == pytest.approx(1.0, abs=1e-12)
    f = cdf_from_pmf(pmf).f
    naive = []
    acc = 0.0
    for p in pmf.p:
        acc += p
        naive.append(acc)
    assert np.max(np.abs(f - np.array(naive))) <= 1e-12
    assert np.all(np.diff(f) >= 0) and f[-1] == 1.0 and f.min() >= 0


def test_invalid_pmf_and_cdf_rejected():
    with pytest.raises(ValueError):
        BinnedPMF(SPEC2, np.array([0.5, 0.6, 0.0]))
    with pytest.raises(ValueError):
        BinnedPMF(SPEC2, np.array([1.2, -0.2, 0.0]))
    with pytest.raises(ValueError):
        BinnedCDF(SPEC2, np.array([0.5, 0.4, 1.0]))
    with pytest.raises(ValueError):
        BinnedCDF(SPEC2, np.array([0.5, 0.6, 0.9]))
    with pytest.raises(ValueError):
        BinnedCDF(SPEC2, np.array([0.5, 1.0]))


def test_target_cdf_examples():
    assert np.array_equal(target_cdf(0.0, SPEC4).f, np.ones(5))
    assert np.array_equal(target_cdf(2.0, SPEC4).f, [0, 0, 1, 1, 1])
    assert np.array_equal(target_cdf(2.5, SPEC4).f, [0, 0, 0, 1, 1])
    with pytest.raises(ValueError):
        target_cdf(-0.1, SPEC4)


def test_target_above_rmax_clamped_with_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        f = target_cdf(9.0, SPEC4).f
    assert np.array_equal(f, [0, 0, 0, 0, 1])
    assert clamp_count(caught) == 1


@given(st.floats(0, 4))
def test_target_equals_point_mass_cdf(y):
    j = int(np.argmax(SPEC4.values >= y))
    p = np.zeros(5)
    p[j] = 1.0
    assert np.array_equal(target_cdf(y, SPEC4).f, cdf_from_pmf(BinnedPMF(SPEC4, p)).f)


def test_ecdf_examples():
    assert np.array_equal(ecdf_from_samples([0.0], SPEC2).f, [1, 1, 1])
    assert np.allclose(ecdf_from_samples([0.5, 1.5], SPEC2).f, [0, 0.5, 1.0])
    with pytest.raises(ValueError):
        ecdf_from_samples([], SPEC2)
    with pytest.raises(ValueError):
        ecdf_from_samples([-1.0], SPEC2)


def test_ecdf_ties_count_at_bin():
    assert np.allclose(ecdf_from_samples([1.0], SPEC2).f, [0, 1, 1])


def test_ecdf_uniform_samples_near_ramp():
    spec = make_spec(8.0, 0.05)
    s = np.random.default_rng(11).uniform(0, spec.r_max, 1000)
    f = ecdf_from_samples(s, spec).f
    # DKW at 95 %: sqrt(ln(2 / 0.05) / 2000) = 0.043
    assert np.max(np.abs(f - spec.values / spec.r_max)) <= 0.06


def test_ecdf_samples_above_rmax_clamped():
    with pytest.warns(ClampWarning):
        f = ecdf_from_samples([0.5, 5.0], SPEC2).f
    assert np.allclose(f, [0, 0.5, 1.0])


def test_soft_ecdf_examples():
    f = soft_ecdf_from_samples([1.0], SPEC2, tau=0.3).f
    assert f[1] == 0.5
    f = soft_ecdf_from_samples([0.5], SPEC2, tau=1e-6).f
    assert np.allclose(f, [0, 1, 1], atol=1e-6)
    with pytest.raises(ValueError):
        soft_ecdf_from_samples([0.5], SPEC2, tau=0.0)


def test_soft_ecdf_default_tau():
    spec = make_spec(8.0, 0.05)
    s = [0.123, 1.777]
    assert np.array_equal(soft_ecdf_from_samples(s, spec).f, soft_ecdf_from_samples(s, spec, tau=0.005).f)


def test_soft_matches_hard_away_from_bins():
    spec = make_spec(8.0, 0.05)
    tau = 0.01 * spec.epsilon
    g = np.random.default_rng(5)
    s = g.uniform(0, 7.9, 400)
    offset = np.abs(s / spec.epsilon - np.round(s / spec.epsilon)) * spec.epsilon
    s = s[offset > 10 * tau]
    soft = soft_ecdf_from_samples(s, spec, tau).f
    hard = ecdf_from_samples(s, spec).f
    assert np.max(np.abs(soft - hard)) <= 0.01


@given(st.lists(st.floats(0.01, 1.99), min_size=1, max_size=8), st.floats(0.05, 1.0))
def test_soft_ecdf_monotone_and_gradient(samples, tau):
    spec = make_spec(2.0, 0.25)
    f = soft_ecdf_from_samples(samples, spec, tau).f
    assert np.all(np.diff(f) >= -1e-15)
    jac = soft_ecdf_grad(samples, spec, tau)
    s = np.array(samples)
    h = 1e-5
    for i in range(len(s)):
        up, dn = s.copy(), s.copy()
        up[i] += h
        dn[i] -= h
        num = (soft_ecdf_from_samples(up, spec, tau).f - soft_ecdf_from_samples(dn, spec, tau).f) / (2 * h)
        scale = np.maximum(np.abs(num), np.abs(jac[:, i]))
        big = scale > 1e-6
        assert np.all(np.abs(num - jac[:, i])[big] / scale[big] <= 1e-5)


def test_cdf_file_round_trip(tmp_path):
    f = cdf_from_pmf(BinnedPMF(SPEC4, np.array([0.5, 0.25, 0.125, 0.125, 0.0])))
    write_cdf(f, tmp_path / "c")
    assert (tmp_path / "c.json").exists()
    back = read_cdf(tmp_path / "c")
    assert back.spec == SPEC4
    assert np.array_equal(back.f, f.f)
