"""Period-level swarm simulator and the DO-RL coordinator built on it.

One simulated *day* is T periods. At each period every drone departs from
the station it landed on last, executes one plan, and lands again; the
simulator then scores the period, updates the forecast and the target, and
derives the next observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import forecast as fc
from .collective import Candidates, SelectionResult, build_tree, run_collective_selection
from .metrics import DEFAULT_ACCURACY_CAP, accuracy, efficiency, overall
from .plangen import N_ACTIONS, Plan, PlanGenerator, PlanGroup, group_sizes
from .scenario import ScenarioWorld

# rng stream identifiers; every random draw comes from rng(seed, stream, *indices)
STREAM_PLANS = 1
STREAM_STATIONS = 2
STREAM_SCENARIO = 3
STREAM_MAPPO = 4


def stream(seed: int, kind: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), kind, *(int(i) for i in indices)])


@dataclass
class SimConfig:
    plans: int = 64
    mobility: int = 2
    beta: float = 0.5
    iterations: int = 40
    accuracy_cap: float = DEFAULT_ACCURACY_CAP
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_hover: bool = True
    reward_field: str = "realized"  # or "predicted"

    def __post_init__(self) -> None:
        if self.reward_field not in ("realized", "predicted"):
            raise ValueError("reward_field must be 'realized' or 'predicted'")
        self.weights = tuple(float(w) for w in self.weights)  # type: ignore[assignment]


@dataclass
class PeriodRecord:
    period: int
    plans: list[Plan]
    global_sum: np.ndarray  # (N, S)
    required: np.ndarray
    collected: np.ndarray
    sensed: np.ndarray
    efficiency: float
    accuracy: float
    energies: np.ndarray
    rewards: np.ndarray
    terminals: list[int]
    predicted: np.ndarray
    target: np.ndarray  # after the update
    actions: list[int] | None = None
    trace: list = field(default_factory=list)
    violations: int = 0


class Simulator:
    def __init__(self, world: ScenarioWorld, config: SimConfig, omega: np.ndarray, seed: int = 0):
        self.world = world
        self.config = config
        self.seed = seed
        self.grid = world.grid
        self.time = world.time
        self.U = world.fleet.size
        self.N = self.grid.n_cells
        self.M = self.grid.n_stations
        self.S = self.time.slots
        self.T = self.time.periods
        self.gen = PlanGenerator(self.grid, world.spec, self.time, config.mobility, config.origin_hover)
        self.forecaster = fc.Forecaster(omega=omega, horizon=self.T)
        self.obs_dim = self.M + 1 + 2 * self.N * self.S
        self.start_day(0, 0)

    # --- state -----------------------------------------------------------------
    def start_day(self, day: int, episode: int) -> None:
        self.day = day
        self.episode = episode
        self.field = self.world.days[day].required
        self.t = 0
        self.stations = list(self.world.fleet.homes)
        self.battery = np.ones(self.U)
        self.own = np.zeros((self.U, self.N * self.S))
        self.others = np.zeros((self.U, self.N * self.S))
        self.target = np.ones((self.N, self.S))
        self.forecaster.reset()
        if day > 0:
            prev = self.world.days[day - 1].required
            self.prior = fc.predict(self.forecaster.omega, list(prev), self.T, self.T)
        else:
            self.prior = np.zeros((self.N, self.S))
        self.records: list[PeriodRecord] = []

    @property
    def done(self) -> bool:
        return self.t >= self.T

    def forecast(self) -> np.ndarray:
        """Best available estimate of the current period's field, from data seen so far."""
        if self.t == 0:
            return self.prior
        return self.forecaster.predict(self.t)

    def observation(self, u: int) -> np.ndarray:
        loc = np.zeros(self.M)
        loc[self.stations[u]] = 1.0
        return np.concatenate([loc, [self.battery[u]], self.own[u], self.others[u]])

    def observations(self) -> list[np.ndarray]:
        return [self.observation(u) for u in range(self.U)]

    def positions(self) -> np.ndarray:
        return np.array([self.grid.stations[m] for m in self.stations], dtype=float) * self.grid.cell_size

    # --- plans -------------------------------------------------------------------
    def plan_group(self, u: int, direction: int) -> PlanGroup:
        """Plans of one direction for drone u; each (drone, direction) owns its rng stream."""
        size = group_sizes(self.config.plans)[direction]
        rng = stream(self.seed, STREAM_PLANS, self.episode, self.t, u, direction)
        origin = self.stations[u]
        return PlanGroup(direction, [self.gen.generate_plan(origin, direction, rng, index=l) for l in range(size)])

    def plan_groups(self, u: int) -> list[PlanGroup]:
        return [self.plan_group(u, d) for d in range(N_ACTIONS)]

    def select(self, groups: Sequence[Sequence[Plan]]) -> tuple[list[Plan], SelectionResult]:
        """Collective plan selection over one candidate list per drone."""
        tree = build_tree(list(range(self.U)), self.positions())
        cands = {
            u: Candidates(np.stack([p.occupancy.ravel() for p in plans]), np.array([p.energy for p in plans]))
            for u, plans in enumerate(groups)
        }
        res = run_collective_selection(tree, cands, self.target, self.config.beta, self.config.iterations)
        return [groups[u][res.selected[u]] for u in range(self.U)], res

    # --- execution ---------------------------------------------------------------
    def execute(self, plans: Sequence[Plan], actions: Sequence[int] | None = None,
                trace: list | None = None, violations: int = 0) -> PeriodRecord:
        if self.done:
            raise RuntimeError("day already finished")
        cfg = self.config
        occ = np.stack([p.occupancy for p in plans]).astype(np.int64)
        total = occ.sum(axis=0)
        required = self.field[self.t]
        sensed = total * required
        collected = (total > 0) * required
        eff = efficiency(collected, required)
        acc = accuracy(sensed, required, cfg.accuracy_cap)
        energies = np.array([p.energy for p in plans])
        self.forecaster.observe(collected)
        predicted = self.forecaster.predict(self.t + 1)
        if cfg.reward_field == "realized":
            r_eff, r_acc = eff, acc
        else:
            r_eff = efficiency(total.clip(max=1) * predicted, predicted)
            r_acc = accuracy(total * predicted, predicted, cfg.accuracy_cap)
        rewards = np.array([overall(r_eff, r_acc, e, *cfg.weights) for e in energies])
        self.target = fc.update_target(self.target, predicted, collected, total, self.U, self.N)
        record = PeriodRecord(
            period=self.t, plans=list(plans), global_sum=total, required=required, collected=collected,
            sensed=sensed, efficiency=eff, accuracy=acc, energies=energies, rewards=rewards,
            terminals=[p.terminal for p in plans], predicted=predicted, target=self.target.copy(),
            actions=list(actions) if actions is not None else None, trace=trace or [], violations=violations,
        )
        self.records.append(record)
        self.stations = [p.terminal for p in plans]
        self.battery = 1.0 - energies
        self.own = occ.reshape(self.U, -1).astype(float)
        self.others = total.reshape(1, -1) - self.own
        self.t += 1
        return record


class DoRLEnv:
    """Period-level environment: each agent picks a direction, collective learning picks the plans."""

    def __init__(self, sim: Simulator, days: Sequence[int]):
        self.sim = sim
        self.days = list(days)
        self.n_agents = sim.U
        self.obs_dim = sim.obs_dim

    def reset(self, episode: int) -> list[np.ndarray]:
        self.sim.start_day(self.days[episode % len(self.days)], episode)
        return self.sim.observations()

    def step(self, actions: Sequence[int]) -> tuple[list[np.ndarray], list[float], bool]:
        record = dorl_period(self.sim, actions)
        return self.sim.observations(), list(record.rewards), self.sim.done


def dorl_period(sim: Simulator, actions: Sequence[int]) -> PeriodRecord:
    groups = [sim.plan_group(u, int(a)).plans for u, a in enumerate(actions)]
    plans, res = sim.select(groups)
    return sim.execute(plans, actions, trace=res.trace)
