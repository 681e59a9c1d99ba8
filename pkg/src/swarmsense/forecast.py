"""Periodic state update: time-reverse-decay forecast and percentile target pruning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

OMEGA_FLOOR = 1e-3
DEFAULT_OMEGA = 0.5


def decay_weights(t: int, horizon: int) -> np.ndarray:
    """Weight (T - t + t') of each past period t' = 1..t."""
    return horizon - t + np.arange(1, t + 1, dtype=float)


def decayed_sum(history: Sequence[np.ndarray], t: int, horizon: int) -> np.ndarray:
    if t > len(history):
        raise ValueError(f"history covers {len(history)} periods, asked for {t}")
    stack = np.asarray(history[:t], dtype=float)
    return np.tensordot(decay_weights(t, horizon), stack, axes=1)


def predict(omega: np.ndarray | float, history: Sequence[np.ndarray], t: int, horizon: int) -> np.ndarray:
    """Predicted field after period ``t``: sum over t' <= t of (T - t + t') * omega * v'(t')."""
    if t == 0 or len(history) == 0:
        shape = np.shape(omega) if np.ndim(omega) else None
        if shape is None:
            raise ValueError("cannot infer a shape from an empty history and scalar omega")
        return np.zeros(shape)
    return np.asarray(omega) * decayed_sum(history, t, horizon)


@dataclass
class Forecaster:
    omega: np.ndarray  # (N, S), strictly inside (0, 1)
    horizon: int
    history: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=float)
        if not ((self.omega > 0) & (self.omega < 1)).all():
            raise ValueError("forecast coefficients must lie strictly inside (0, 1)")

    def observe(self, collected: np.ndarray) -> None:
        self.history.append(np.asarray(collected, dtype=float))

    def reset(self) -> None:
        self.history = []

    def predict(self, t: int | None = None) -> np.ndarray:
        t = len(self.history) if t is None else t
        if t == 0:
            return np.zeros_like(self.omega)
        return predict(self.omega, self.history, t, self.horizon)


def fit_coefficients(
    histories: Sequence[Sequence[np.ndarray]],
    targets: Sequence[np.ndarray],
    horizon: int,
) -> np.ndarray:
    """Per (cell, slot) least-squares coefficient of the decayed history against the realized next field.

    Sample k pairs a history of t_k periods with the field realized after it.
    Cells whose regressor is identically zero fall back to 0.5; every value is
    then clamped into [1e-3, 1 - 1e-3].
    """
    if len(histories) != len(targets) or not histories:
        raise ValueError("need one realized target per training history, at least one pair")
    xs = np.stack([decayed_sum(h, len(h), horizon) for h in histories])
    ys = np.stack([np.asarray(y, dtype=float) for y in targets])
    sxx = (xs * xs).sum(axis=0)
    sxy = (xs * ys).sum(axis=0)
    omega = np.full(sxx.shape, DEFAULT_OMEGA)
    mask = sxx > 0
    omega[mask] = sxy[mask] / sxx[mask]
    return np.clip(omega, OMEGA_FLOOR, 1.0 - OMEGA_FLOOR)


def training_pairs(days: Sequence[np.ndarray]) -> tuple[list[list[np.ndarray]], list[np.ndarray]]:
    """Every (periods 1..t, period t+1) split of each (T, N, S) day."""
    histories, targets = [], []
    for day in days:
        for t in range(1, len(day)):
            histories.append(list(day[:t]))
            targets.append(day[t])
    return histories, targets


def percentile_threshold(predicted: np.ndarray, n_drones: int, n_cells: int) -> float:
    if n_drones > n_cells:
        raise ValueError(f"more drones ({n_drones}) than cells ({n_cells})")
    return float(np.percentile(predicted, 100.0 * (1.0 - n_drones / n_cells)))


def update_target(
    target: np.ndarray,
    predicted: np.ndarray,
    collected: np.ndarray,
    global_sum: np.ndarray,
    n_drones: int,
    n_cells: int,
) -> np.ndarray:
    """Drop target entries that were visited but yielded less than the percentile threshold."""
    threshold = percentile_threshold(predicted, n_drones, n_cells)
    prune = (np.asarray(collected) < threshold) & (np.asarray(global_sum) > 0)
    out = np.array(target, copy=True)
    out[prune] = 0
    return out


SNAPSHOT_HEADER = ["period", "cell", "slot", "predicted", "collected", "target"]


def write_snapshot(path: str | Path, period: int, predicted: np.ndarray, collected: np.ndarray,
                   target: np.ndarray, append: bool = True) -> None:
    path = Path(path)
    fresh = not append or not path.exists()
    with open(path, "w" if fresh else "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(SNAPSHOT_HEADER)
        n_cells, n_slots = predicted.shape
        for n in range(n_cells):
            for s in range(n_slots):
                w.writerow([period, n + 1, s + 1, repr(float(predicted[n, s])),
                            repr(float(collected[n, s])), int(target[n, s])])
