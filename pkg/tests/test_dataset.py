import numpy as np
import pytest

from raincast.dataset import fmt, read_dataset, read_manifest, split_indices, write_dataset
from raincast.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    cfg = SynthConfig(seed=8, mask_fraction=0.1)
    samples = generate(cfg, 5)
    out = tmp_path_factory.mktemp("data")
    return cfg, samples, out, write_dataset(out, cfg, samples)


def test_layout_and_manifest(written):
    cfg, samples, out, manifest = written
    names = sorted(p.name for p in out.iterdir())
    expect = sorted([f"sample_{i:06d}.{e}" for i in range(5) for e in ("feat", "rate", "mask")]
                    + ["manifest.json", "targets.csv"])
    assert names == expect
    assert read_manifest(out) == manifest
    assert manifest["config"] == cfg.to_dict() and manifest["n"] == 5
    assert len(manifest["checksums"]) == 16


def test_roundtrip_within_float32(written):
    _, samples, out, _ = written
    back = read_dataset(out, verify=True)
    for a, b in zip(samples, back):
        assert a.sample_id == b.sample_id
        assert np.array_equal(a.cube.valid, b.cube.valid)
        assert np.allclose(a.cube.rate, b.cube.rate, rtol=1e-7, atol=0)
        assert np.array_equal(b.features, a.features.astype(np.float32))
        assert b.y == pytest.approx(a.y, rel=1e-6)


def test_targets_csv_matches_stored_rates(written):
    _, _, out, _ = written
    lines = (out / "targets.csv").read_text().splitlines()
    assert lines[0] == "id,y_mm"
    back = read_dataset(out)
    for line, s in zip(lines[1:], back):
        sid, y = line.split(",")
        assert sid == s.sample_id and y == fmt(s.y)


def test_checksum_mismatch_detected(tmp_path):
    cfg = SynthConfig(seed=1)
    write_dataset(tmp_path, cfg, generate(cfg, 2))
    p = tmp_path / "sample_000001.rate"
    data = bytearray(p.read_bytes())
    data[-1] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="checksum"):
        read_dataset(tmp_path, verify=True)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path)


def test_rewrite_is_byte_identical(tmp_path):
    cfg = SynthConfig(seed=2)
    s = generate(cfg, 3)
    write_dataset(tmp_path / "a", cfg, s)
    write_dataset(tmp_path / "b", cfg, s)
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_split():
    tr, va = split_indices(50, 3, 0.2)
    assert len(va) == 10 and len(tr) == 40
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(50))
    assert all(np.array_equal(a, b) for a, b in zip((tr, va), split_indices(50, 3, 0.2)))
    assert not np.array_equal(va, split_indices(50, 4, 0.2)[1])
    with pytest.raises(ValueError):
        split_indices(1, 0)
    with pytest.raises(ValueError):
        split_indices(5, 0, 0.95)
