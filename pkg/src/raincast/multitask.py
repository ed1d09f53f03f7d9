"""EMA-normalised combination of the per-pixel and aggregate losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

from raincast import EPS_DIV


@dataclass(frozen=True)
class EmaState:
    rho: float = 0.99
    value: float | None = None

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")


def ema_update(state: EmaState, loss: float) -> EmaState:
    if not math.isfinite(loss):
        raise ValueError(f"non-finite loss {loss!r}")
    if state.value is None:
        return replace(state, value=float(loss))
    return replace(state, value=state.rho * state.value + (1.0 - state.rho) * float(loss))


class Combined(NamedTuple):
    total: float
    pixel_term: float
    agg_term: float
    d_pixel: float  # d total / d l_pixel, normalisers held constant
    d_agg: float


def combined_loss(l_pixel: float, l_agg: float, pix_state: EmaState, agg_state: EmaState,
                  lambda_agg: float = 1.0, eps: float = EPS_DIV) -> Combined:
    """``L_pix / (|ema_pix| + eps) + lambda * L_agg / (|ema_agg| + eps)``.

    The EMA values enter as constants: gradients flow only through the raw
    losses. Update both states with this step's losses before calling.

    The uncertainty-weighted pixel loss goes negative once its log-variances
    fall below zero, so its EMA can change sign. Dividing by the magnitude
    keeps each term a descent direction; for positive averages this is the
    plain ratio.
    """
    if pix_state.value is None or agg_state.value is None:
        raise ValueError("EMA state is uninitialised; call ema_update first")
    norm_pix = abs(pix_state.value) + eps
    norm_agg = abs(agg_state.value) + eps
    d_pix = 1.0 / norm_pix
    d_agg = lambda_agg / norm_agg
    pix_term = l_pixel * d_pix
    agg_term = l_agg / norm_agg
    return Combined(pix_term + lambda_agg * agg_term, pix_term, agg_term, d_pix, d_agg)
