"""Probabilistic rainfall nowcasting toolkit: binned eCDF forecasts, RPS/CRPS
scoring, Gamma-Hurdle per-pixel losses, moment-matched aggregates and a
synthetic zero-inflated rainfall generator."""

__version__ = "0.1.0"

EPS_DIV = 1e-8
