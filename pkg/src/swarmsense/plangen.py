"""Plan generation: nine direction-grouped sets of discrete navigation/sensing plans."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import DroneSpec, plan_energy
from .scenario import GridMap, InvalidInput, TimeStructure, distance_matrix

N_ACTIONS = 9
ACTION_NAMES = ("O", "N", "E", "S", "W", "NE", "SE", "SW", "NW")
# (d_row, d_col); row 0 is the northern edge
DIRECTIONS: dict[int, tuple[int, int]] = {
    1: (-1, 0),
    2: (0, 1),
    3: (1, 0),
    4: (0, -1),
    5: (-1, 1),
    6: (1, 1),
    7: (1, -1),
    8: (-1, -1),
}
MAX_ATTEMPTS = 100
DEFAULT_MOBILITY = 2
_EPS = 1e-9


class PlanGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Plan:
    index: int
    direction: int
    origin: int  # station id
    terminal: int  # station id
    search_range: frozenset[int]
    visited: tuple[int, ...]  # route order
    hover_slots: tuple[int, ...]  # slot of each hover, aligned with the hovered cells
    hover_cells: tuple[int, ...]
    occupancy: np.ndarray  # (N, S) int8
    fly_time: float
    hover_time: float
    energy: float

    @property
    def n_hovers(self) -> int:
        return len(self.hover_cells)


@dataclass
class PlanGroup:
    direction: int
    plans: list[Plan]

    def __len__(self) -> int:
        return len(self.plans)

    def stacked(self) -> np.ndarray:
        return np.stack([p.occupancy.ravel() for p in self.plans]).astype(np.int32)

    def energies(self) -> np.ndarray:
        return np.array([p.energy for p in self.plans])


def group_sizes(total: int) -> list[int]:
    """Split ``total`` plans over the nine actions: an even share each, remainder round-robin to 1..8."""
    if total < N_ACTIONS:
        raise InvalidInput(f"need at least {N_ACTIONS} plans, got {total}")
    base, rem = divmod(total, N_ACTIONS)
    return [base] + [base + (1 if d <= rem else 0) for d in range(1, N_ACTIONS)]


def corridor_width(grid: GridMap, origin_station: int) -> float:
    """Corridor width in meters: half the distance to the nearest other station.

    With a single station there is no neighbour; the width falls back to two
    cells (a half-width of one cell).
    """
    if grid.n_stations == 1:
        return 2.0 * grid.cell_size
    r0, c0 = grid.stations[origin_station]
    nearest = min(
        math.hypot(r - r0, c - c0)
        for m, (r, c) in enumerate(grid.stations)
        if m != origin_station
    )
    return 0.5 * nearest * grid.cell_size


def search_range(grid: GridMap, origin_station: int, direction: int) -> frozenset[int]:
    """Cells ahead of the origin station inside a straight corridor along ``direction``."""
    if direction not in DIRECTIONS:
        raise InvalidInput(f"direction must be 1..8, got {direction}")
    if not (0 <= origin_station < grid.n_stations):
        raise InvalidInput(f"unknown station {origin_station}")
    dr, dc = DIRECTIONS[direction]
    norm = math.hypot(dr, dc)
    ur, uc = dr / norm, dc / norm
    half = 0.5 * corridor_width(grid, origin_station)
    r0, c0 = grid.stations[origin_station]
    out = set()
    for cell in range(grid.n_cells):
        r, c = divmod(cell, grid.cols)
        yr, yc = (r - r0) * grid.cell_size, (c - c0) * grid.cell_size
        along = yr * ur + yc * uc
        perp = abs(yr * uc - yc * ur)
        if along > _EPS and perp <= half + _EPS:
            out.add(cell)
    return frozenset(out)


class PlanGenerator:
    """Caches grid geometry so repeated plan generation stays cheap."""

    def __init__(
        self,
        grid: GridMap,
        spec: DroneSpec,
        time: TimeStructure,
        mobility: int = DEFAULT_MOBILITY,
        origin_hover: bool = True,
    ):
        if mobility < 1:
            raise InvalidInput("mobility must be >= 1")
        self.grid = grid
        self.spec = spec
        self.time = time
        self.mobility = mobility
        self.origin_hover = origin_hover
        self.dist = distance_matrix(grid)
        self.station_cells = np.array([grid.station_cell(m) for m in range(grid.n_stations)])
        to_station = self.dist[:, self.station_cells]
        # argmin returns the first minimum, i.e. the lowest station id on ties
        self.nearest_station = np.argmin(np.round(to_station, 9), axis=1)
        self._ranges: dict[tuple[int, int], tuple[int, ...]] = {}
        self._slot_seconds = time.slot_duration
        self._leg_denominator = spec.ground_speed * time.slot_duration

    def travel_slots(self, a: int, b: int) -> int:
        d = self.dist[a, b]
        if d <= _EPS:
            return 0
        return int(math.ceil(d / self._leg_denominator - 1e-12))

    def range_of(self, origin_station: int, direction: int) -> tuple[int, ...]:
        key = (origin_station, direction)
        if key not in self._ranges:
            self._ranges[key] = tuple(sorted(search_range(self.grid, origin_station, direction)))
        return self._ranges[key]

    def best_order(self, origin_cell: int, cells: Sequence[int]) -> tuple[tuple[int, ...], int]:
        """Shortest visiting order (origin -> cells -> nearest station), ties to the lexicographically smallest."""
        best: tuple[int, ...] | None = None
        best_len = math.inf
        best_term = -1
        for order in itertools.permutations(sorted(cells)):
            term = int(self.nearest_station[order[-1]])
            length = self.dist[origin_cell, order[0]]
            for a, b in zip(order, order[1:]):
                length += self.dist[a, b]
            length += self.dist[order[-1], self.station_cells[term]]
            if length < best_len - 1e-9:
                best, best_len, best_term = order, length, term
        assert best is not None
        return best, best_term

    def _build(
        self,
        index: int,
        direction: int,
        origin: int,
        terminal: int,
        krange: frozenset[int],
        visited: tuple[int, ...],
        start: int,
        legs: list[int],
    ) -> Plan:
        S = self.time.slots
        occ = np.zeros((self.grid.n_cells, S), dtype=np.int8)
        slot = start
        hover_slots = []
        for cell, leg in zip(visited, legs):
            slot += leg
            occ[cell, slot] = 1
            hover_slots.append(slot)
            slot += 1
        fly = sum(legs) * self._slot_seconds
        hover = len(visited) * self._slot_seconds
        return Plan(
            index=index,
            direction=direction,
            origin=origin,
            terminal=terminal,
            search_range=krange,
            visited=visited,
            hover_slots=tuple(hover_slots),
            hover_cells=visited,
            occupancy=occ,
            fly_time=fly,
            hover_time=hover,
            energy=plan_energy(self.spec, fly, hover),
        )

    def stay_plan(self, origin_station: int, rng: np.random.Generator, index: int = 0, direction: int = 0) -> Plan:
        """Return-to-origin plan: optionally one bookkeeping hover over the station cell."""
        S = self.time.slots
        cell = int(self.station_cells[origin_station])
        occ = np.zeros((self.grid.n_cells, S), dtype=np.int8)
        if self.origin_hover:
            slot = int(rng.integers(S))
            occ[cell, slot] = 1
            hover_slots, hover_cells = (slot,), (cell,)
            hover = self._slot_seconds
        else:
            hover_slots, hover_cells = (), ()
            hover = 0.0
        return Plan(
            index=index,
            direction=direction,
            origin=origin_station,
            terminal=origin_station,
            search_range=frozenset(),
            visited=(),
            hover_slots=hover_slots,
            hover_cells=hover_cells,
            occupancy=occ,
            fly_time=0.0,
            hover_time=hover,
            energy=plan_energy(self.spec, 0.0, hover),
        )

    def generate_plan(
        self,
        origin_station: int,
        direction: int,
        rng: np.random.Generator,
        index: int = 0,
        mobility: int | None = None,
    ) -> Plan:
        if direction == 0:
            return self.stay_plan(origin_station, rng, index)
        j_count = self.mobility if mobility is None else mobility
        if j_count < 1:
            raise InvalidInput("mobility must be >= 1")
        cells = self.range_of(origin_station, direction)
        if not cells:
            # nothing ahead (e.g. heading off the map): behave like action 0
            return self.stay_plan(origin_station, rng, index, direction=direction)
        j_count = min(j_count, len(cells))
        krange = frozenset(cells)
        origin_cell = int(self.station_cells[origin_station])
        S = self.time.slots
        for _ in range(MAX_ATTEMPTS):
            pick = rng.choice(len(cells), size=j_count, replace=False)
            order, term = self.best_order(origin_cell, [cells[i] for i in pick])
            legs = [self.travel_slots(origin_cell, order[0])]
            legs += [self.travel_slots(a, b) for a, b in zip(order, order[1:])]
            legs.append(self.travel_slots(order[-1], int(self.station_cells[term])))
            used = sum(legs) + len(order)
            if used > S:
                continue
            energy = plan_energy(self.spec, sum(legs) * self._slot_seconds, len(order) * self._slot_seconds)
            if energy > 1.0:
                continue
            start = int(rng.integers(S - used + 1))
            return self._build(index, direction, origin_station, term, krange, order, start, legs)
        raise PlanGenerationError(
            f"no feasible plan from station {origin_station} heading {ACTION_NAMES[direction]} "
            f"after {MAX_ATTEMPTS} attempts"
        )

    def generate_all(self, origin_station: int, total: int, rng: np.random.Generator) -> list[PlanGroup]:
        groups = []
        for direction, size in enumerate(group_sizes(total)):
            plans = [self.generate_plan(origin_station, direction, rng, index=l) for l in range(size)]
            groups.append(PlanGroup(direction=direction, plans=plans))
        return groups

    def retarget(self, plan: Plan, terminal: int) -> Plan | None:
        """Same visits and hover slots, but ending at another station; None if that no longer fits."""
        if terminal == plan.terminal:
            return plan
        S = self.time.slots
        term_cell = int(self.station_cells[terminal])
        if not plan.hover_cells:
            # idle plan: fly straight from origin to the new station
            leg = self.travel_slots(int(self.station_cells[plan.origin]), term_cell)
            if leg > S:
                return None
            fly = leg * self._slot_seconds
            energy = plan_energy(self.spec, fly, plan.hover_time)
            if energy > 1.0:
                return None
            return replace(plan, terminal=terminal, fly_time=fly, energy=energy)
        old_leg = self.travel_slots(plan.hover_cells[-1], int(self.station_cells[plan.terminal]))
        new_leg = self.travel_slots(plan.hover_cells[-1], term_cell)
        if plan.hover_slots[-1] + 1 + new_leg > S:
            return None
        fly = plan.fly_time + (new_leg - old_leg) * self._slot_seconds
        energy = plan_energy(self.spec, fly, plan.hover_time)
        if energy > 1.0:
            return None
        return replace(plan, terminal=terminal, fly_time=fly, energy=energy)


def generate_plan(
    grid: GridMap,
    spec: DroneSpec,
    time: TimeStructure,
    origin_station: int,
    direction: int,
    mobility: int,
    rng: np.random.Generator,
) -> Plan:
    return PlanGenerator(grid, spec, time, mobility).generate_plan(origin_station, direction, rng)


def generate_all(
    grid: GridMap,
    spec: DroneSpec,
    time: TimeStructure,
    origin_station: int,
    total: int,
    mobility: int,
    rng: np.random.Generator,
) -> list[PlanGroup]:
    return PlanGenerator(grid, spec, time, mobility).generate_all(origin_station, total, rng)


def check_plan(plan: Plan, gen: PlanGenerator) -> list[str]:
    """Return a list of violated plan invariants (empty when the plan is valid)."""
    problems = []
    occ = plan.occupancy
    if occ.shape != (gen.grid.n_cells, gen.time.slots):
        problems.append("occupancy shape")
    if not np.isin(occ, (0, 1)).all():
        problems.append("occupancy not binary")
    if (occ.sum(axis=0) > 1).any():
        problems.append("two cells in one slot")
    if not set(plan.visited) <= plan.search_range:
        problems.append("visited cells outside search range")
    if plan.direction != 0 and plan.search_range and len(plan.visited) != min(gen.mobility, len(plan.search_range)):
        problems.append("visited count differs from mobility range")
    if plan.energy > 1.0 + 1e-12:
        problems.append("energy above one battery")
    if abs(plan.energy - plan_energy(gen.spec, plan.fly_time, plan.hover_time)) > 1e-12:
        problems.append("energy inconsistent with times")
    if plan.fly_time + plan.hover_time > gen.time.period_seconds + 1e-9:
        problems.append("route exceeds the period")
    if int(occ.sum()) != plan.n_hovers:
        problems.append("occupancy count differs from hover count")
    return problems


PLAN_CSV_HEADER = [
    "record", "drone", "direction", "plan", "energy", "fly_time", "hover_time", "terminal", "cell", "slot",
]


def export_plans_csv(path: str | Path, plans_by_drone: dict[int, list[PlanGroup]]) -> None:
    """One ``plan`` metadata row per plan followed by one ``visit`` row per occupied (cell, slot).

    Indices in the file are 1-based.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_CSV_HEADER)
        for drone, groups in sorted(plans_by_drone.items()):
            for group in groups:
                for p in group.plans:
                    w.writerow(["plan", drone + 1, p.direction, p.index + 1, repr(p.energy),
                                repr(p.fly_time), repr(p.hover_time), p.terminal + 1, "", ""])
                    for n, s in zip(*np.nonzero(p.occupancy)):
                        w.writerow(["visit", drone + 1, p.direction, p.index + 1, "", "", "", "", n + 1, s + 1])
