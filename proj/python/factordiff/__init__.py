"""Diffusion augmentation toolkit for stock factor sequences."""

from ._core import (
    backtest,
    frechet_distance,
    information_coefficient,
    linear_schedule,
    load_dataset,
    rank_ic,
    run_cli,
    save_dataset,
    synthetic_market,
    weighted_ic,
)

__all__ = [
    "backtest",
    "frechet_distance",
    "information_coefficient",
    "linear_schedule",
    "load_dataset",
    "rank_ic",
    "run_cli",
    "save_dataset",
    "synthetic_market",
    "weighted_ic",
]
