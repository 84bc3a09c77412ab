"""MAE / MAPE / RMSE on de-normalized forecasts."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricSet:
    horizon: str
    mae: float
    mape: float
    rmse: float
    count: int


def _metric_set(horizon, pred, target, epsilon) -> MetricSet:
    err = (pred - target).ravel()
    rel = err / (target.ravel() + epsilon)
    return MetricSet(
        horizon=str(horizon),
        mae=float(np.mean(np.abs(err))),
        mape=float(100.0 * np.mean(np.abs(rel))),
        rmse=float(np.sqrt(np.mean(err * err))),
        count=int(err.size),
    )


def evaluate(preds, targets, epsilon: float = 1e-5, horizons=None, cumulative: bool = False) -> list[MetricSet]:
    """Metrics for each requested output step plus an ``all`` aggregate.

    ``preds`` and ``targets`` have shape ``(windows, S, nodes)``. Horizons are
    1-based step indices. With ``cumulative`` a horizon ``h`` covers steps
    ``1..h`` (accumulated error) instead of step ``h`` alone.
    """
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: preds {p.shape} vs targets {y.shape}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if p.ndim != 3:
        p = p.reshape(p.shape[0], 1, -1) if p.ndim == 2 else p.reshape(1, 1, -1)
        y = y.reshape(p.shape)
    steps = p.shape[1]
    if horizons is None:
        horizons = range(1, steps + 1)
    out = []
    for h in horizons:
        if not 1 <= h <= steps:
            raise ValueError(f"horizon {h} outside 1..{steps}")
        sl = slice(0, h) if cumulative else slice(h - 1, h)
        out.append(_metric_set(h, p[:, sl], y[:, sl], epsilon))
    out.append(_metric_set("all", p, y, epsilon))
    return out


def write_metrics_csv(metrics: list[MetricSet], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "mae", "mape", "rmse", "count"])
        for m in metrics:
            writer.writerow([m.horizon, repr(m.mae), repr(m.mape), repr(m.rmse), m.count])
