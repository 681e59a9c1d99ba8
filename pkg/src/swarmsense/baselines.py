"""Comparison methods behind one coordinator seam.

``Coordinator.run_period(sim)`` picks one plan per drone for the simulator's
current period, executes it, and returns the period record. Every method goes
through ``Simulator.execute`` so metrics, forecasts and targets are handled
identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .energy import plan_energy
from .plangen import DIRECTIONS, N_ACTIONS, Plan
from .rl import Learner
from .sim import STREAM_STATIONS, PeriodRecord, Simulator, dorl_period, stream

log = logging.getLogger(__name__)

METHODS = ("do-rl", "greedy", "epos", "mappo")


class Coordinator(Protocol):
    name: str

    def run_period(self, sim: Simulator) -> PeriodRecord: ...


# --- greedy ----------------------------------------------------------------------

def greedy_choice(sim: Simulator, u: int, predicted: np.ndarray) -> tuple[int, int] | None:
    """Cell and hover slot with the best predicted value per metre of round trip.

    The round trip is floored at one cell width so the station cell does not
    win by dividing by zero. Ties go to the lower cell id, then the earlier slot.
    Returns None when no reachable (cell, slot) has positive value.
    """
    gen = sim.gen
    S = sim.S
    origin = int(gen.station_cells[sim.stations[u]])
    best, best_score = None, 0.0
    for n in range(sim.N):
        home = int(gen.station_cells[gen.nearest_station[n]])
        k1, k2 = gen.travel_slots(origin, n), gen.travel_slots(n, home)
        lo, hi = k1, S - 1 - k2
        if lo > hi:
            continue
        if plan_energy(gen.spec, (k1 + k2) * gen._slot_seconds, gen._slot_seconds) > 1.0:
            continue
        s = lo + int(np.argmax(predicted[n, lo:hi + 1]))
        trip = max(gen.dist[origin, n] + gen.dist[n, home], sim.grid.cell_size)
        score = predicted[n, s] / trip
        if score > best_score + 1e-12:
            best, best_score = (n, s), score
    return best


def greedy_plan(sim: Simulator, u: int, predicted: np.ndarray) -> Plan:
    gen = sim.gen
    origin = sim.stations[u]
    choice = greedy_choice(sim, u, predicted)
    if choice is None:
        return idle_plan(sim, u)
    n, s = choice
    term = int(gen.nearest_station[n])
    k1 = gen.travel_slots(int(gen.station_cells[origin]), n)
    k2 = gen.travel_slots(n, int(gen.station_cells[term]))
    return gen._build(0, 0, origin, term, frozenset({n}), (n,), s - k1, [k1, k2])


def idle_plan(sim: Simulator, u: int) -> Plan:
    m = sim.stations[u]
    return Plan(index=0, direction=0, origin=m, terminal=m, search_range=frozenset(), visited=(),
                hover_slots=(), hover_cells=(), occupancy=np.zeros((sim.N, sim.S), dtype=np.int8),
                fly_time=0.0, hover_time=0.0, energy=0.0)


def greedy_step(sim: Simulator) -> list[Plan]:
    """Each drone on its own, blind to the others' choices."""
    predicted = sim.forecast()
    return [greedy_plan(sim, u, predicted) for u in range(sim.U)]


@dataclass
class GreedyCoordinator:
    name: str = "greedy"

    def run_period(self, sim: Simulator) -> PeriodRecord:
        return sim.execute(greedy_step(sim))


# --- EPOS-only ----------------------------------------------------------------------

def epos_pool(sim: Simulator, u: int) -> list[Plan]:
    """All plans of drone u re-terminated at one uniformly drawn station."""
    station = int(stream(sim.seed, STREAM_STATIONS, sim.episode, sim.t, u).integers(sim.M))
    plans = [p for g in sim.plan_groups(u) for p in g.plans]
    pool = [q for q in (sim.gen.retarget(p, station) for p in plans) if q is not None]
    if not pool:
        log.warning("drone %d: no plan reaches station %d, keeping original terminals", u, station)
        return plans
    return pool


def epos_only_step(sim: Simulator) -> tuple[list[Plan], list]:
    plans, res = sim.select([epos_pool(sim, u) for u in range(sim.U)])
    return plans, res.trace


@dataclass
class EposCoordinator:
    name: str = "epos"

    def run_period(self, sim: Simulator) -> PeriodRecord:
        plans, trace = epos_only_step(sim)
        return sim.execute(plans, trace=trace)


# --- DO-RL ------------------------------------------------------------------------------

@dataclass
class DoRLCoordinator:
    learner: Learner
    explore: bool = False
    name: str = "do-rl"

    def run_period(self, sim: Simulator) -> PeriodRecord:
        actions = self.learner.act(sim.observations(), explore=self.explore)
        return dorl_period(sim, actions)


# --- slot-level MAPPO -------------------------------------------------------------------

HOVER = 0


@dataclass
class _Track:
    cell: int
    energy: float = 0.0
    fly_slots: int = 0
    hover_slots: list[int] = field(default_factory=list)
    hover_cells: list[int] = field(default_factory=list)
    returned: bool = False
    violation: bool = False


class MappoEnv:
    """Slot-level environment: one decision per drone per timeslot.

    Action 0 hovers and senses the current cell; actions 1..8 move one cell in
    the matching compass direction, clamped at the border (a clamped move
    hovers in place). A drone flies back to its nearest station as soon as the
    remaining slots only just cover the trip, or earlier when the next slot
    would leave too little battery to get home (counted as a violation).
    """

    def __init__(self, sim: Simulator, days: Sequence[int]):
        self.sim = sim
        self.days = list(days)
        self.n_agents = sim.U
        self.obs_dim = 3 * sim.N + 2
        self.gen = sim.gen
        self._hover_cost = plan_energy(sim.world.spec, 0.0, sim.time.slot_duration)
        self._fly_cost = plan_energy(sim.world.spec, sim.time.slot_duration, 0.0)

    # -- helpers
    def _return_slots(self, cell: int) -> int:
        return self.gen.travel_slots(cell, int(self.gen.station_cells[self.gen.nearest_station[cell]]))

    def _move(self, cell: int, action: int) -> int:
        if action == HOVER:
            return cell
        r, c = self.sim.grid.coord(cell)
        dr, dc = DIRECTIONS[action]
        if not self.sim.grid.in_grid(r + dr, c + dc):
            return cell
        return self.sim.grid.index(r + dr, c + dc)

    def _begin_period(self) -> None:
        self.slot = 0
        self.tracks = [_Track(int(self.gen.station_cells[m])) for m in self.sim.stations]
        self.paid = np.zeros(self.n_agents)
        self.required = self.sim.field[self.sim.t]
        self.total_required = float(self.required.sum()) or 1.0
        self.forecast_now = self.sim.forecast()
        self._settle_returns()

    def _go_home(self, tr: _Track, violation: bool = False) -> None:
        k = self._return_slots(tr.cell)
        tr.fly_slots += k
        tr.energy += k * self._fly_cost
        tr.returned = True
        tr.violation = violation

    def _settle_returns(self) -> None:
        for tr in self.tracks:
            if not tr.returned and self._return_slots(tr.cell) >= self.sim.S - self.slot:
                self._go_home(tr)

    def observation(self, u: int) -> np.ndarray:
        N = self.sim.N
        here = np.zeros(N)
        others = np.zeros(N)
        for v, tr in enumerate(self.tracks):
            if tr.returned:
                continue
            (here if v == u else others)[tr.cell] += 1.0
        column = self.forecast_now[:, min(self.slot, self.sim.S - 1)]
        scale = column.max() or 1.0
        battery = 1.0 - self.tracks[u].energy
        return np.concatenate([here, others, column / scale, [battery, self.slot / self.sim.S]])

    def observations(self) -> list[np.ndarray]:
        return [self.observation(u) for u in range(self.n_agents)]

    # -- Env protocol
    def reset(self, episode: int) -> list[np.ndarray]:
        self.sim.start_day(self.days[episode % len(self.days)], episode)
        self._begin_period()
        return self.observations()

    def step(self, actions: Sequence[int]) -> tuple[list[np.ndarray], list[float], bool]:
        rewards = self.advance(actions)
        return self.observations(), rewards, self.sim.done

    def advance(self, actions: Sequence[int]) -> list[float]:
        """Play one slot for every drone; returns per-slot rewards."""
        sim = self.sim
        a1, _, a3 = sim.config.weights
        s = self.slot
        before = np.array([tr.energy for tr in self.tracks])
        sensed_cells = set()
        for tr, a in zip(self.tracks, actions):
            if tr.returned:
                continue
            a = int(a)
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"action {a} outside 0..{N_ACTIONS - 1}")
            nxt = self._move(tr.cell, a)
            if s + 1 + self._return_slots(nxt) > sim.S:
                # moving there would leave no time to get back: fly home instead
                self._go_home(tr)
                continue
            hover = nxt == tr.cell
            cost = self._hover_cost if hover else self._fly_cost
            if tr.energy + cost + self._return_slots(nxt) * self._fly_cost > 1.0 + 1e-12:
                self._go_home(tr, violation=True)
                continue
            tr.energy += cost
            if hover:
                tr.hover_slots.append(s)
                tr.hover_cells.append(tr.cell)
                sensed_cells.add(tr.cell)
            else:
                tr.fly_slots += 1
                tr.cell = nxt
        self.slot += 1
        self._settle_returns()
        gained = sum(self.required[n, s] for n in sensed_cells) / self.total_required
        spent = np.array([tr.energy for tr in self.tracks]) - before
        rewards = a1 * gained - a3 * spent
        if self.slot == sim.S:
            for tr in self.tracks:
                if not tr.returned:
                    self._go_home(tr)
            record = self.finish_period()
            # the last slot closes the books: per-slot rewards sum to the period reward
            rewards = record.rewards - self.paid
        self.paid += rewards
        if self.slot == sim.S:
            self.paid[:] = 0.0
            if not sim.done:
                self._begin_period()
        return [float(r) for r in rewards]

    def plans(self) -> list[Plan]:
        sim = self.sim
        out = []
        for u, tr in enumerate(self.tracks):
            occ = np.zeros((sim.N, sim.S), dtype=np.int8)
            occ[tr.hover_cells, tr.hover_slots] = 1
            fly = tr.fly_slots * sim.time.slot_duration
            hover = len(tr.hover_slots) * sim.time.slot_duration
            out.append(Plan(index=0, direction=0, origin=sim.stations[u],
                            terminal=int(self.gen.nearest_station[tr.cell]),
                            search_range=frozenset(tr.hover_cells), visited=tuple(tr.hover_cells),
                            hover_slots=tuple(tr.hover_slots), hover_cells=tuple(tr.hover_cells),
                            occupancy=occ, fly_time=fly, hover_time=hover,
                            energy=plan_energy(sim.world.spec, fly, hover)))
        return out

    def finish_period(self) -> PeriodRecord:
        violations = sum(tr.violation for tr in self.tracks)
        if violations:
            log.info("period %d: %d forced battery returns", self.sim.t, violations)
        return self.sim.execute(self.plans(), violations=violations)


def mappo_step(learner: Learner, env: MappoEnv, explore: bool = False) -> PeriodRecord:
    """Play the simulator's current period slot by slot with the given policies."""
    if env.slot != 0:
        raise RuntimeError("mappo_step must start at the first slot of a period")
    n_before = len(env.sim.records)
    while len(env.sim.records) == n_before:
        env.advance(learner.act(env.observations(), explore=explore))
    return env.sim.records[-1]


@dataclass
class MappoCoordinator:
    learner: Learner
    env: MappoEnv
    explore: bool = False
    name: str = "mappo"

    def run_period(self, sim: Simulator) -> PeriodRecord:
        if sim is not self.env.sim:
            raise ValueError("coordinator is bound to another simulator")
        if sim.t == 0:
            self.env._begin_period()
        return mappo_step(self.learner, self.env, self.explore)
