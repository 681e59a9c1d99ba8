"""Evaluation quantities: efficiency, accuracy, energy, overall performance, charging load."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_ACCURACY_CAP = 10.0


def efficiency(collected: np.ndarray, required: np.ndarray) -> float:
    """Share of the required sensing value that was collected."""
    collected = np.asarray(collected, dtype=float)
    required = np.asarray(required, dtype=float)
    if collected.shape != required.shape:
        raise ValueError("collected and required shapes differ")
    total = required.sum()
    if total == 0:
        log.info("nothing required this period; efficiency defined as 1")
        return 1.0
    return float(collected.sum() / total)


def accuracy(collected: np.ndarray, required: np.ndarray, cap: float = DEFAULT_ACCURACY_CAP) -> float:
    """Inverse RMSE between sensed and required values, capped at ``cap``."""
    collected = np.asarray(collected, dtype=float)
    required = np.asarray(required, dtype=float)
    if collected.shape != required.shape:
        raise ValueError("collected and required shapes differ")
    mismatch = float(((collected - required) ** 2).sum())
    if mismatch == 0:
        return float(cap)
    return float(min(cap, np.sqrt(collected.size / mismatch)))


def overall(eff: float, acc: float, energy: float, a1: float = 1.0, a2: float = 1.0, a3: float = 1.0) -> float:
    return a1 * eff + a2 * acc - a3 * energy


@dataclass
class PeriodMetrics:
    efficiency: float
    accuracy: float
    energy: np.ndarray  # (U,)
    overall: float
    remaining_battery: np.ndarray  # (U,)
    charging_load: np.ndarray  # (M,) joules

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")
        if (self.charging_load < 0).any():
            raise ValueError("negative charging load")


def charging_report(
    terminals: Sequence[Sequence[int]],
    energies: Sequence[Sequence[float]],
    n_stations: int,
    battery_capacity: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-station energy drawn and per-drone battery left, indexed [station, period] and [drone, period].

    ``terminals[t][u]`` is where drone u lands after period t and
    ``energies[t][u]`` the battery fraction its plan used.
    """
    terms = np.asarray(terminals, dtype=int)
    energy = np.asarray(energies, dtype=float)
    n_periods = terms.shape[0]
    load = np.zeros((n_stations, n_periods))
    for t in range(n_periods):
        np.add.at(load[:, t], terms[t], energy[t] * battery_capacity)
    remaining = (1.0 - energy).T
    return load, remaining


def period_metrics(
    sensed: np.ndarray,
    collected: np.ndarray,
    required: np.ndarray,
    energies: Sequence[float],
    terminals: Sequence[int],
    n_stations: int,
    battery_capacity: float,
    cap: float = DEFAULT_ACCURACY_CAP,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> PeriodMetrics:
    energy = np.asarray(energies, dtype=float)
    eff = efficiency(collected, required)
    acc = accuracy(sensed, required, cap)
    load, remaining = charging_report([terminals], [energy], n_stations, battery_capacity)
    total = float(sum(overall(eff, acc, e, *weights) for e in energy))
    return PeriodMetrics(eff, acc, energy, total, remaining[:, 0], load[:, 0])
