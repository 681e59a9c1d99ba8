"""Experiment configuration, orchestration and result export.

Seeding: one master seed per run. Every random draw in a run comes from
``numpy.random.default_rng([seed, stream_id, *indices])`` (see ``sim.stream``):
traffic for day d uses (seed, 3, d), plans (seed, 1, episode, period, drone,
direction), EPOS station draws (seed, 2, episode, period, drone), and the
learner derives its network-init, sampling and action streams from
``SeedSequence([seed, 7]).spawn(3)``. Nothing reads global random state.

Layout: ``<output>/<config_hash>/<seed>/<method>/``. The hash covers every
setting except the method, the seed list, the output root and the sweep table,
so runs of different methods on the same setup share a hash and can be joined.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from . import forecast as fc
from .baselines import (
    METHODS,
    DoRLCoordinator,
    EposCoordinator,
    GreedyCoordinator,
    MappoCoordinator,
    MappoEnv,
)
from .collective import TRACE_HEADER
from .energy import PROFILES
from .metrics import charging_report
from .rl import EpisodeLog, Learner, PPOConfig, train
from .scenario import (
    DroneFleet,
    GridMap,
    Hotspot,
    ScenarioWorld,
    TimeStructure,
    generate_synthetic_traffic,
    import_traffic_csv,
    uniform_stations,
)
from .sim import STREAM_SCENARIO, DoRLEnv, PeriodRecord, SimConfig, Simulator

log = logging.getLogger(__name__)

LEARNING_METHODS = ("do-rl", "mappo")
METRICS_HEADER = ["method", "seed", "period", "drone", "eff", "acc", "energy", "reward", "battery_remaining"]
STATION_HEADER = ["method", "seed", "period", "station", "load_joules"]
METRIC_COLUMNS = ["eff", "acc", "energy", "reward", "battery_remaining"]
HASH_EXCLUDED = ("method", "seeds", "output", "sweep", "jobs")


class InvalidConfig(ValueError):
    pass


def _basic_hotspots() -> list[dict]:
    # morning/evening style peaks in opposite corners of an 8x8 city
    return [
        {"center": [1, 1], "peak": 10.0, "spread": 1.5, "profile": [1, 2, 3, 2, 1, 1, 2, 3]},
        {"center": [6, 6], "peak": 10.0, "spread": 1.5, "profile": [3, 2, 1, 1, 2, 3, 2, 1]},
    ]


@dataclass
class ExperimentConfig:
    method: str = "do-rl"
    # scenario
    rows: int = 8
    cols: int = 8
    cell_size: float = 200.0
    station_count: int = 4
    stations: list | None = None  # [[row, col], ...]; None spreads station_count uniformly
    periods: int = 8
    slots: int = 30
    slot_duration: float = 60.0
    drones: int = 16
    drone_profile: str = "phantom4pro"
    days: int = 10
    hotspots: list = field(default_factory=_basic_hotspots)
    noise: float = 0.1
    traffic_csv: list = field(default_factory=list)  # one file per day; replaces the synthetic generator
    # planning and selection
    plans: int = 64
    mobility: int = 2
    beta: float = 0.5
    iterations: int = 40
    accuracy_cap: float = 10.0
    weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    origin_hover: bool = True
    reward_field: str = "realized"
    # learning
    episodes: int = 300
    batch_size: int = 64
    gamma: float = 0.95
    clip: float = 0.2
    hidden: int = 64
    layers: int = 3
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    updates_per_episode: int = 4
    buffer_capacity: int = 10_000
    train_fraction: float = 0.8
    # orchestration
    seeds: list = field(default_factory=lambda: [0])
    sweep: dict = field(default_factory=dict)
    output: str = "out"
    jobs: int = 1

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InvalidConfig(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        positive = ("rows", "cols", "station_count", "periods", "slots", "drones", "days", "plans",
                    "mobility", "iterations", "episodes", "batch_size", "hidden", "layers",
                    "updates_per_episode", "buffer_capacity", "jobs")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be a positive count")
        for name in ("cell_size", "slot_duration", "actor_lr", "critic_lr", "accuracy_cap"):
            if not float(getattr(self, name)) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.drones > self.rows * self.cols:
            raise InvalidConfig("drones must not outnumber grid cells")
        if self.plans < 9:
            raise InvalidConfig("plans must be at least 9 (one per direction)")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfig("beta must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfig("train_fraction must lie strictly between 0 and 1")
        if self.days < 2:
            raise InvalidConfig("days must be >= 2 to hold out test data")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise InvalidConfig("weights needs three non-negative numbers")
        if self.drone_profile not in PROFILES:
            raise InvalidConfig(f"unknown drone profile {self.drone_profile!r}")
        if self.reward_field not in ("realized", "predicted"):
            raise InvalidConfig("reward_field must be 'realized' or 'predicted'")
        if not self.seeds:
            raise InvalidConfig("seeds must list at least one seed")
        for path in self.traffic_csv:
            if not Path(path).is_file():
                raise InvalidConfig(f"traffic file not found: {path}")
        if self.traffic_csv and len(self.traffic_csv) != self.days:
            raise InvalidConfig(f"days = {self.days} but {len(self.traffic_csv)} traffic files given")
        for key in self.sweep:
            if key in HASH_EXCLUDED or key not in {f.name for f in fields(self)}:
                raise InvalidConfig(f"cannot sweep over {key!r}")

    def digest(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k not in HASH_EXCLUDED}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:12]

    def ppo(self, seed: int) -> PPOConfig:
        return PPOConfig(episodes=self.episodes, batch_size=self.batch_size, gamma=self.gamma, clip=self.clip,
                         hidden=self.hidden, layers=self.layers, actor_lr=self.actor_lr,
                         critic_lr=self.critic_lr, updates_per_episode=self.updates_per_episode,
                         buffer_capacity=self.buffer_capacity, seed=int(seed))

    def sim_config(self) -> SimConfig:
        return SimConfig(plans=self.plans, mobility=self.mobility, beta=self.beta, iterations=self.iterations,
                         accuracy_cap=self.accuracy_cap, weights=tuple(self.weights),
                         origin_hover=self.origin_hover, reward_field=self.reward_field)

    def points(self) -> list["ExperimentConfig"]:
        """One config per sweep point (cartesian product of the sweep table)."""
        if not self.sweep:
            return [self]
        keys = sorted(self.sweep)
        return [replace(self, sweep={}, **dict(zip(keys, combo)))
                for combo in itertools.product(*(self.sweep[k] for k in keys))]


PRESETS: dict[str, dict[str, Any]] = {
    "basic": {},
    "desk": {
        "rows": 4, "cols": 4, "station_count": 2, "periods": 4, "slots": 10, "drones": 4, "days": 10,
        "hotspots": [
            {"center": [0, 0], "peak": 10.0, "spread": 1.0, "profile": [1, 2, 3, 2]},
            {"center": [3, 3], "peak": 10.0, "spread": 1.0, "profile": [3, 2, 1, 2]},
        ],
        "episodes": 300,
    },
}


def make_config(preset: str = "basic", path: str | Path | None = None, overrides: dict | None = None
                ) -> ExperimentConfig:
    """Preset defaults, then the config file, then explicit overrides."""
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    values: dict[str, Any] = dict(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"config {path} is not valid YAML/JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise InvalidConfig("config file must hold a key-value mapping")
        if "preset" in loaded:
            values = dict(PRESETS.get(loaded.pop("preset"), {}))
            values.update(loaded)
        else:
            values.update(loaded)
    values.update(overrides or {})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
    if isinstance(cfg.seeds, int):
        cfg.seeds = [cfg.seeds]
    try:
        cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from None
    return cfg


# --- scenario ------------------------------------------------------------------------

def build_grid(cfg: ExperimentConfig) -> GridMap:
    stations = cfg.stations or uniform_stations(cfg.rows, cfg.cols, cfg.station_count)
    return GridMap(cfg.rows, cfg.cols, cfg.cell_size, tuple(tuple(int(x) for x in s) for s in stations))


def build_world(cfg: ExperimentConfig, seed: int) -> ScenarioWorld:
    grid = build_grid(cfg)
    time = TimeStructure(cfg.periods, cfg.slots, cfg.slot_duration)
    fleet = DroneFleet(homes=tuple(u % grid.n_stations for u in range(cfg.drones)),
                       spec=PROFILES[cfg.drone_profile])
    if cfg.traffic_csv:
        days = tuple(import_traffic_csv(p, grid, time) for p in cfg.traffic_csv)
    else:
        spots = [
            Hotspot(grid.index(*h["center"]), float(h["peak"]), float(h["spread"]),
                    tuple(h["profile"]) if h.get("profile") is not None else None)
            for h in cfg.hotspots
        ]
        days = tuple(
            generate_synthetic_traffic(grid, time, spots, seed=[int(seed), STREAM_SCENARIO, d], noise=cfg.noise)
            for d in range(cfg.days)
        )
    return ScenarioWorld(grid, time, fleet, days)


def split_days(n_days: int, train_fraction: float) -> tuple[list[int], list[int]]:
    n_train = min(n_days - 1, max(1, int(math.floor(n_days * train_fraction + 0.5))))
    return list(range(n_train)), list(range(n_train, n_days))


def fit_forecast(world: ScenarioWorld, days: Sequence[int]) -> np.ndarray:
    histories, targets = fc.training_pairs([world.days[d].required for d in days])
    if not histories:
        return np.full((world.grid.n_cells, world.time.slots), fc.DEFAULT_OMEGA)
    return fc.fit_coefficients(histories, targets, world.time.periods)


# --- running ----------------------------------------------------------------------------

@dataclass
class RunResult:
    method: str
    seed: int
    records: list[PeriodRecord]
    training: EpisodeLog | None
    directory: Path | None = None


def _learner_and_env(cfg: ExperimentConfig, sim: Simulator, train_days: Sequence[int], seed: int):
    if cfg.method == "do-rl":
        env = DoRLEnv(sim, train_days)
    else:
        env = MappoEnv(sim, train_days)
    return Learner(env.n_agents, env.obs_dim, cfg.ppo(seed)), env


def train_method(cfg: ExperimentConfig, seed: int) -> tuple[Learner, EpisodeLog, Simulator, MappoEnv | DoRLEnv]:
    if cfg.method not in LEARNING_METHODS:
        raise InvalidConfig(f"{cfg.method} does not learn")
    world = build_world(cfg, seed)
    train_days, _ = split_days(cfg.days, cfg.train_fraction)
    sim = Simulator(world, cfg.sim_config(), fit_forecast(world, train_days), seed=seed)
    learner, env = _learner_and_env(cfg, sim, train_days, seed)
    learner, history = train(env, cfg.ppo(seed), learner)
    return learner, history, sim, env


def evaluate(cfg: ExperimentConfig, seed: int, learner: Learner | None = None,
             sim: Simulator | None = None) -> list[PeriodRecord]:
    """Play every held-out day with the configured method; exploration off."""
    if sim is None:
        world = build_world(cfg, seed)
        train_days, _ = split_days(cfg.days, cfg.train_fraction)
        sim = Simulator(world, cfg.sim_config(), fit_forecast(world, train_days), seed=seed)
    _, test_days = split_days(cfg.days, cfg.train_fraction)
    if cfg.method == "greedy":
        coord = GreedyCoordinator()
    elif cfg.method == "epos":
        coord = EposCoordinator()
    elif cfg.method == "do-rl":
        assert learner is not None
        coord = DoRLCoordinator(learner)
    else:
        assert learner is not None
        coord = MappoCoordinator(learner, MappoEnv(sim, test_days))
    records = []
    for i, day in enumerate(test_days):
        # evaluation episodes get ids past the training range so their rng streams never overlap
        sim.start_day(day, cfg.episodes + i)
        while not sim.done:
            records.append(coord.run_period(sim))
    return records


def run_single(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None) -> RunResult:
    learner = history = sim = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_config(out_dir / "config.json", cfg, seed)
    if cfg.method in LEARNING_METHODS:
        learner, history, sim, _ = train_method(cfg, seed)
        if out_dir is not None:
            write_training_log(out_dir / "training.csv", history, cfg.digest())
            learner.save(out_dir / "checkpoint.npz", cfg.digest())
    records = evaluate(cfg, seed, learner, sim)
    if out_dir is not None:
        write_outputs(out_dir, cfg, seed, records)
    return RunResult(cfg.method, seed, records, history, out_dir)


def run_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.output) / cfg.digest() / str(seed) / cfg.method


def _run_job(args: tuple[ExperimentConfig, int]) -> Path:
    cfg, seed = args
    out = run_dir(cfg, seed)
    run_single(cfg, seed, out)
    return out


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Run every (sweep point, seed) pair; returns the run directories."""
    cfg.validate()
    jobs = [(point, int(seed)) for point in cfg.points() for seed in cfg.seeds]
    for point, _ in jobs:
        point.validate()
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(job) for job in jobs]


# --- output -----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_config(path: Path, cfg: ExperimentConfig, seed: int) -> None:
    payload = {"config_hash": cfg.digest(), "seed": seed, "config": asdict(cfg)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_training_log(path: Path, history: EpisodeLog, digest: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(list(EpisodeLog.HEADER) + ["config_hash"])
        for row in history.rows:
            w.writerow([row["episode"]] + [_fmt(row[k]) for k in EpisodeLog.HEADER[1:]] + [digest])


def metric_rows(records: Sequence[PeriodRecord], method: str, seed: int) -> list[list]:
    rows = []
    for k, rec in enumerate(records, start=1):
        for u in range(len(rec.energies)):
            rows.append([method, seed, k, u + 1, _fmt(rec.efficiency), _fmt(rec.accuracy),
                         _fmt(rec.energies[u]), _fmt(rec.rewards[u]), _fmt(1.0 - rec.energies[u])])
    return rows


def station_loads(records: Sequence[PeriodRecord], n_stations: int, capacity: float) -> np.ndarray:
    load, _ = charging_report([r.terminals for r in records], [r.energies for r in records], n_stations, capacity)
    return load


def write_outputs(out_dir: Path, cfg: ExperimentConfig, seed: int, records: Sequence[PeriodRecord]) -> None:
    digest = cfg.digest()
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(METRICS_HEADER + ["config_hash"])
        for row in metric_rows(records, cfg.method, seed):
            w.writerow(row + [digest])
    grid = build_grid(cfg)
    load = station_loads(records, grid.n_stations, PROFILES[cfg.drone_profile].battery_capacity)
    with open(out_dir / "stations.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(STATION_HEADER + ["config_hash"])
        for k in range(load.shape[1]):
            for m in range(load.shape[0]):
                w.writerow([cfg.method, seed, k + 1, m + 1, _fmt(load[m, k]), digest])
    if any(r.trace for r in records):
        with open(out_dir / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = _writer(fh)
            w.writerow(["period"] + TRACE_HEADER + ["config_hash"])
            for k, rec in enumerate(records, start=1):
                for it, r, e, _ in rec.trace:
                    w.writerow([k, it, _fmt(r), _fmt(e), digest])


# --- comparison -------------------------------------------------------------------------

COMPARE_HEADER = ["config_hash", "method", "seeds"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")]


def find_metric_files(paths: Iterable[str | Path]) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(p.rglob("metrics.csv")))
        else:
            raise FileNotFoundError(f"no such run directory: {p}")
    return found


def load_metrics(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def compare(paths: Iterable[str | Path], force: bool = False) -> list[list]:
    """Per (config hash, method): mean and sample std over seeds of each seed-level metric mean."""
    files = find_metric_files(paths)
    if len(files) < 2:
        raise ValueError("compare needs at least two completed runs")
    expected = METRICS_HEADER + ["config_hash"]
    per_seed: dict[tuple[str, str], dict[int, list[np.ndarray]]] = {}
    hashes = set()
    for path in files:
        header, rows = load_metrics(path)
        for col in expected:
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        for col in header:
            if col not in expected:
                raise ValueError(f"{path}: unexpected column {col!r}")
        for row in rows:
            key = (row["config_hash"], row["method"])
            hashes.add(row["config_hash"])
            per_seed.setdefault(key, {}).setdefault(int(row["seed"]), []).append(
                np.array([float(row[c]) for c in METRIC_COLUMNS]))
    if len(hashes) > 1 and not force:
        raise ValueError(f"runs come from different configurations ({', '.join(sorted(hashes))}); "
                         "pass force to join them anyway")
    table = []
    for (digest, method), seeds in sorted(per_seed.items()):
        means = np.array([np.mean(v, axis=0) for _, v in sorted(seeds.items())])
        std = means.std(axis=0, ddof=1) if len(means) > 1 else np.zeros(len(METRIC_COLUMNS))
        row: list = [digest, method, len(means)]
        for c in range(len(METRIC_COLUMNS)):
            row += [_fmt(means[:, c].mean()), _fmt(std[c])]
        table.append(row)
    return table


def write_compare(path: str | Path, table: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(COMPARE_HEADER)
        w.writerows(table)
