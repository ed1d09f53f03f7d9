"""Forecast heads and batch scoring shared by the ``score`` and ``eval`` commands."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from raincast import rng as rngmod
from raincast.binning import BinnedCDF, BinSpec, target_cdf
from raincast.dataset import fmt
from raincast.hurdle import hurdle_ecdf
from raincast.moments import gamma_forecast, lognormal_forecast
from raincast.scoring import ScoreRecord, climatology_baseline, pairwise_sum, score
from raincast.synth import Sample
from raincast.train import forward_ecdf, pool_features, predict_field

HEADS = ("ecdf", "hurdle-samples", "moments-lognormal", "moments-gamma")
BACKBONE = "linear"

Forecaster = Callable[[int, Sample], BinnedCDF]


def id_key(sample_id: str) -> int:
    """Stable 32-bit key of a sample id."""
    return int.from_bytes(hashlib.sha256(sample_id.encode("utf-8")).digest()[:4], "little")


def head_forecaster(head: str, model, n_samples: int = 1000, seed: int = 0) -> Forecaster:
    """Per-sample forecast function for one head of a loaded model.

    Hurdle draws for a sample use the root seed ``derive_seed(seed, EVAL, id_key(sample_id))``,
    so a forecast does not depend on which other samples are scored.
    """
    spec = model.spec
    if head == "ecdf":
        if model.ecdf is None:
            raise ValueError("model has no eCDF head; train with objective rps or multitask")
        return lambda i, s: forward_ecdf(model.ecdf, pool_features(s.features))
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; choose from {HEADS}")
    if model.hurdle is None:
        raise ValueError(f"head {head!r} needs a hurdle head; train with objective hurdle or multitask")
    hm = model.hurdle
    if head == "hurdle-samples":
        def f(i, s):
            sid = rngmod.derive_seed(seed, rngmod.EVAL, id_key(s.sample_id))
            return hurdle_ecdf(predict_field(hm, s), spec, n_samples, sid, valid=s.cube.valid)
        return f
    build = lognormal_forecast if head == "moments-lognormal" else gamma_forecast
    return lambda i, s: build(predict_field(hm, s), spec, s.cube.valid)


def oracle_forecaster(spec: BinSpec) -> Forecaster:
    """Forecast equal to the target step function; every score is zero."""
    return lambda i, s: target_cdf(s.y, spec)


def climatology_forecaster(ys_train, spec: BinSpec) -> Forecaster:
    clim = climatology_baseline(ys_train, spec)
    return lambda i, s: clim


def score_samples(samples: list[Sample], forecaster: Forecaster, threads: int = 1) -> list[ScoreRecord]:
    """Scores in sample order; the thread count only changes scheduling."""
    def one(item):
        i, s = item
        return score(s.sample_id, forecaster(i, s), s.y)

    items = list(enumerate(samples))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, items))
    return [one(it) for it in items]


def mean_scores(records: list[ScoreRecord]) -> tuple[float, float]:
    n = len(records)
    return pairwise_sum([r.rps for r in records]) / n, pairwise_sum([r.crps for r in records]) / n


def score_csv(records: list[ScoreRecord]) -> str:
    lines = ["id,y_mm,rps,crps_mm"]
    lines += [f"{r.sample_id},{fmt(r.y)},{fmt(r.rps)},{fmt(r.crps)}" for r in records]
    return "\n".join(lines) + "\n"
