"""World model: grid geometry, time structure, stations, sensing fields.

Cells, stations and drones are 0-based in the Python API. Traffic CSV files
use 1-based indices and are converted on the way in and out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import DroneSpec


class InvalidInput(ValueError):
    pass


class TrafficParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TimeStructure:
    periods: int
    slots: int
    slot_duration: float = 60.0

    def __post_init__(self) -> None:
        if self.periods < 1 or self.slots < 1:
            raise InvalidInput("periods and slots must be >= 1")
        if not self.slot_duration > 0:
            raise InvalidInput("slot_duration must be positive")

    @property
    def horizon(self) -> int:
        return self.periods * self.slots

    @property
    def period_seconds(self) -> float:
        return self.slots * self.slot_duration


@dataclass(frozen=True)
class GridMap:
    rows: int
    cols: int
    cell_size: float
    stations: tuple[tuple[int, int], ...]  # (row, col) of station m

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InvalidInput("grid dimensions must be positive")
        if not self.cell_size > 0:
            raise InvalidInput("cell_size must be positive")
        if not self.stations:
            raise InvalidInput("at least one charging station is required")
        for r, c in self.stations:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise InvalidInput(f"station at ({r}, {c}) lies outside the grid")
        object.__setattr__(self, "stations", tuple((int(r), int(c)) for r, c in self.stations))

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def coord(self, cell: int) -> tuple[int, int]:
        self.check_cell(cell)
        return divmod(cell, self.cols)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise InvalidInput(f"({row}, {col}) lies outside the grid")
        return row * self.cols + col

    def check_cell(self, cell: int) -> None:
        if not (0 <= cell < self.n_cells):
            raise InvalidInput(f"cell {cell} out of range 0..{self.n_cells - 1}")

    def station_cell(self, station: int) -> int:
        return self.index(*self.stations[station])

    def in_grid(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols

    def centers(self) -> np.ndarray:
        """(N, 2) array of (row, col) cell-center coordinates in meters."""
        rr, cc = np.divmod(np.arange(self.n_cells), self.cols)
        return np.stack([rr, cc], axis=1).astype(float) * self.cell_size


def cell_distance(grid: GridMap, a: int, b: int) -> float:
    ra, ca = grid.coord(a)
    rb, cb = grid.coord(b)
    return grid.cell_size * math.hypot(ra - rb, ca - cb)


def distance_matrix(grid: GridMap) -> np.ndarray:
    centers = grid.centers()
    diff = centers[:, None, :] - centers[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def uniform_stations(rows: int, cols: int, count: int) -> tuple[tuple[int, int], ...]:
    """Spread ``count`` stations over a near-square lattice of grid sub-blocks.

    Each station sits at the center cell of its block, so four stations on an
    8x8 grid land on the quarter points (2, 2), (2, 6), (6, 2), (6, 6).
    """
    if count < 1:
        raise InvalidInput("station count must be >= 1")
    k_rows = max(1, int(math.floor(math.sqrt(count))))
    while count % k_rows:
        k_rows -= 1
    k_cols = count // k_rows
    if k_cols > cols or k_rows > rows:
        raise InvalidInput("too many stations for this grid")
    out = []
    for i in range(k_rows):
        r = int(rows * (2 * i + 1) // (2 * k_rows))
        for j in range(k_cols):
            c = int(cols * (2 * j + 1) // (2 * k_cols))
            out.append((r, c))
    return tuple(out)


@dataclass
class SensingField:
    required: np.ndarray  # (T, N, S)
    collected: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.required = np.asarray(self.required, dtype=float)
        if self.required.ndim != 3:
            raise InvalidInput("required must have shape (T, N, S)")
        if (self.required < 0).any():
            raise InvalidInput("required sensing values must be non-negative")
        if self.collected is None:
            self.collected = np.zeros_like(self.required)
        self.collected = np.asarray(self.collected, dtype=float)
        if self.collected.shape != self.required.shape:
            raise InvalidInput("collected and required shapes differ")
        if (self.collected < 0).any() or (self.collected > self.required).any():
            raise InvalidInput("collected values must lie between 0 and the requirement")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.required.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Hotspot:
    center: int
    peak: float
    spread: float  # in cells
    profile: tuple | None = None  # per period (T,) or per period/slot (T, S); None is flat

    def temporal(self, time: TimeStructure) -> np.ndarray:
        if self.profile is None:
            return np.ones((time.periods, time.slots))
        prof = np.asarray(self.profile, dtype=float)
        if prof.ndim == 1:
            if prof.shape[0] != time.periods:
                raise InvalidInput("per-period profile needs one value per period")
            return np.repeat(prof[:, None], time.slots, axis=1)
        if prof.shape != (time.periods, time.slots):
            raise InvalidInput("profile must have shape (T,) or (T, S)")
        return prof


def generate_synthetic_traffic(
    grid: GridMap,
    time: TimeStructure,
    hotspots: Sequence[Hotspot],
    seed: int | None = 0,
    noise: float = 0.1,
) -> SensingField:
    """Sum of Gaussian hotspots, each modulated by its temporal profile.

    ``seed`` draws one uniform multiplier in [1 - noise, 1 + noise] per hotspot
    peak; pass ``noise=0`` for the noiseless closed form.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.divmod(np.arange(grid.n_cells), grid.cols)
    required = np.zeros((time.periods, grid.n_cells, time.slots))
    for spot in hotspots:
        if not (0 <= spot.center < grid.n_cells):
            raise InvalidInput(f"hotspot center {spot.center} outside grid")
        if spot.peak < 0:
            raise InvalidInput("hotspot peak must be non-negative")
        peak = spot.peak * rng.uniform(1.0 - noise, 1.0 + noise) if noise else spot.peak
        r0, c0 = divmod(spot.center, grid.cols)
        d2 = (rows - r0) ** 2 + (cols - c0) ** 2
        if spot.spread <= 0:
            spatial = (d2 == 0).astype(float)
        else:
            spatial = np.exp(-d2 / (2.0 * spot.spread**2))
        temporal = spot.temporal(time)
        if (temporal < 0).any():
            raise InvalidInput("temporal profile must be non-negative")
        required += peak * spatial[None, :, None] * temporal[:, None, :]
    return SensingField(required=required)


TRAFFIC_HEADER = ["period", "cell", "slot", "value"]


def import_traffic_csv(path: str | Path, grid: GridMap, time: TimeStructure) -> SensingField:
    required = np.zeros((time.periods, grid.n_cells, time.slots))
    seen: set[tuple[int, int, int]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return SensingField(required=required)
        if [h.strip() for h in header] != TRAFFIC_HEADER:
            raise TrafficParseError(1, f"expected header {','.join(TRAFFIC_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != 4:
                raise TrafficParseError(line, f"expected 4 fields, got {len(row)}")
            try:
                t, n, s = (int(x) for x in row[:3])
                value = float(row[3])
            except ValueError as exc:
                raise TrafficParseError(line, f"malformed row: {exc}") from None
            if not (1 <= t <= time.periods and 1 <= n <= grid.n_cells and 1 <= s <= time.slots):
                raise TrafficParseError(line, f"index ({t}, {n}, {s}) out of range")
            if not value >= 0 or not math.isfinite(value):
                raise TrafficParseError(line, f"value must be a finite non-negative number, got {row[3]}")
            key = (t, n, s)
            if key in seen:
                raise TrafficParseError(line, f"duplicate key {key}")
            seen.add(key)
            required[t - 1, n - 1, s - 1] = value
    return SensingField(required=required)


def export_traffic_csv(path: str | Path, sensing: SensingField) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAFFIC_HEADER)
        for t, n, s in zip(*np.nonzero(sensing.required)):
            writer.writerow([t + 1, n + 1, s + 1, repr(float(sensing.required[t, n, s]))])


@dataclass(frozen=True)
class DroneFleet:
    homes: tuple[int, ...]  # home station of drone u
    spec: DroneSpec = DroneSpec()

    @property
    def size(self) -> int:
        return len(self.homes)

    def validate(self, grid: GridMap) -> None:
        for u, m in enumerate(self.homes):
            if not (0 <= m < grid.n_stations):
                raise InvalidInput(f"drone {u} has unknown home station {m}")


def round_robin_fleet(count: int, stations: int, spec: DroneSpec | None = None) -> DroneFleet:
    return DroneFleet(homes=tuple(u % stations for u in range(count)), spec=spec or DroneSpec())


@dataclass(frozen=True)
class ScenarioWorld:
    grid: GridMap
    time: TimeStructure
    fleet: DroneFleet
    days: tuple[SensingField, ...]

    def __post_init__(self) -> None:
        self.fleet.validate(self.grid)
        for day in self.days:
            if day.shape != (self.time.periods, self.grid.n_cells, self.time.slots):
                raise InvalidInput("sensing field shape disagrees with grid/time")

    @property
    def spec(self) -> DroneSpec:
        return self.fleet.spec
