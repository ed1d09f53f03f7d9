"""Dataset directories written by ``raincast gen``.

Layout::

    manifest.json            config, seed, sample ids and sha256 checksums
    sample_000000.feat       C x F x h x w features
    sample_000000.rate       T x H x W rain rates (mm/hr)
    sample_000000.mask       T x H x W validity (0.0 / 1.0)
    targets.csv              id,y_mm
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from raincast import rng as rngmod
from raincast.scoring import aggregate_target
from raincast.synth import Sample, SynthConfig
from raincast.tensorio import RainCube, read_json, read_mask, read_tensor, write_json, write_mask, write_tensor

FORMAT_VERSION = 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def fmt(x: float) -> str:
    """Shortest stable text for CSV output: 9 significant digits."""
    return f"{x:.9g}"


def write_dataset(out_dir, cfg: SynthConfig, samples: list[Sample]) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checksums = {}
    rows = ["id,y_mm"]
    for s in samples:
        for ext, writer, arr in (
            ("feat", write_tensor, s.features),
            ("rate", write_tensor, s.cube.rate),
            ("mask", write_mask, s.cube.valid),
        ):
            p = out / f"{s.sample_id}.{ext}"
            writer(arr, p)
            checksums[p.name] = _sha256(p)
        # y is recomputed from the float32 rates that were actually stored
        rows.append(f"{s.sample_id},{fmt(_stored_target(out, s.sample_id))}")
    (out / "targets.csv").write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    checksums["targets.csv"] = _sha256(out / "targets.csv")
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n": len(samples),
        "ids": [s.sample_id for s in samples],
        "checksums": checksums,
    }
    write_json(manifest, out / "manifest.json")
    return manifest


def _stored_target(out: Path, sid: str) -> float:
    cube = RainCube(read_tensor(out / f"{sid}.rate"), read_mask(out / f"{sid}.mask"))
    return aggregate_target(cube)


def read_manifest(data_dir) -> dict:
    p = Path(data_dir) / "manifest.json"
    if not p.exists():
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    return read_json(p)


def read_dataset(data_dir, verify: bool = False) -> list[Sample]:
    d = Path(data_dir)
    manifest = read_manifest(d)
    if verify:
        for name, digest in manifest["checksums"].items():
            if _sha256(d / name) != digest:
                raise ValueError(f"checksum mismatch for {name}")
    samples = []
    for sid in manifest["ids"]:
        cube = RainCube(read_tensor(d / f"{sid}.rate"), read_mask(d / f"{sid}.mask"))
        samples.append(Sample(sid, read_tensor(d / f"{sid}.feat"), cube, aggregate_target(cube)))
    return samples


def split_indices(n: int, seed: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/validation split of ``range(n)``."""
    n_val = max(1, int(round(n * val_fraction)))
    if n < 2 or n_val >= n:
        raise ValueError(f"cannot split {n} samples into non-empty train and validation sets")
    perm = rngmod.stream(seed, rngmod.SPLIT).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
