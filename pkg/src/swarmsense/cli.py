"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 1 runtime failure.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import yaml

from . import harness as hs
from .plangen import PlanGenerator, export_plans_csv
from .rl import Learner
from .scenario import export_traffic_csv
from .sim import STREAM_PLANS, stream


def _overrides(method, seeds, episodes, output, jobs, settings) -> dict:
    out: dict = {}
    for item in settings:
        if "=" not in item:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--set")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    if method is not None:
        out["method"] = method
    if seeds:
        out["seeds"] = [int(s) for s in seeds.split(",")]
    if episodes is not None:
        out["episodes"] = episodes
    if output is not None:
        out["output"] = output
    if jobs is not None:
        out["jobs"] = jobs
    return out


def config_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or JSON config file."),
        click.option("--preset", default="basic", show_default=True, help="Defaults to start from (basic, desk)."),
        click.option("--method", type=click.Choice(hs.METHODS), default=None),
        click.option("--seeds", default=None, help="Comma-separated seed list."),
        click.option("--episodes", type=int, default=None),
        click.option("--output", default=None, help="Output root directory."),
        click.option("--jobs", type=int, default=None, help="Parallel worker processes."),
        click.option("--set", "settings", multiple=True, metavar="KEY=VALUE", help="Override any config key."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def load(config_path, preset, method, seeds, episodes, output, jobs, settings) -> hs.ExperimentConfig:
    try:
        return hs.make_config(preset, config_path, _overrides(method, seeds, episodes, output, jobs, settings))
    except (hs.InvalidConfig, click.BadParameter) as exc:
        click.echo(f"invalid configuration: {exc}", err=True)
        sys.exit(2)


def _guard(fn):
    try:
        return fn()
    except hs.InvalidConfig as exc:
        click.echo(f"invalid configuration: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the runtime exit code
        logging.getLogger(__name__).exception("run failed")
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Drone-swarm sensing simulator: scenario generation, training, evaluation and comparison."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.group()
def scenario() -> None:
    """Scenario utilities."""


@scenario.command("gen")
@config_options
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def scenario_gen(out_dir, **kw) -> None:
    """Write one traffic CSV per simulated day."""
    cfg = load(**kw)

    def go():
        world = hs.build_world(cfg, int(cfg.seeds[0]))
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        for d, day in enumerate(world.days):
            export_traffic_csv(path / f"day{d + 1:03d}.csv", day)
        click.echo(str(path))

    _guard(go)


@main.command()
@config_options
def run(**kw) -> None:
    """Train (learning methods) and evaluate for every seed and sweep point."""
    cfg = load(**kw)
    for d in _guard(lambda: hs.run_experiment(cfg)):
        click.echo(str(d))


@main.command("train")
@config_options
def train_cmd(**kw) -> None:
    """Train only; writes the training log and checkpoint per seed."""
    cfg = load(**kw)
    if cfg.method not in hs.LEARNING_METHODS:
        click.echo(f"invalid configuration: method {cfg.method} has nothing to train", err=True)
        sys.exit(2)

    def go():
        for seed in cfg.seeds:
            out = hs.run_dir(cfg, seed)
            out.mkdir(parents=True, exist_ok=True)
            hs.write_config(out / "config.json", cfg, seed)
            learner, history, _, _ = hs.train_method(cfg, seed)
            hs.write_training_log(out / "training.csv", history, cfg.digest())
            learner.save(out / "checkpoint.npz", cfg.digest())
            click.echo(str(out))

    _guard(go)


@main.command("eval")
@config_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Policies for learning methods; defaults to the run directory's checkpoint.")
def eval_cmd(checkpoint, **kw) -> None:
    """Evaluate on the held-out days and write the metric CSVs."""
    cfg = load(**kw)

    def go():
        for seed in cfg.seeds:
            out = hs.run_dir(cfg, seed)
            out.mkdir(parents=True, exist_ok=True)
            learner = None
            if cfg.method in hs.LEARNING_METHODS:
                ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.npz"
                if not ckpt.is_file():
                    raise hs.InvalidConfig(f"no checkpoint at {ckpt}; run train first")
                obs_dim = _obs_dim(cfg)
                learner = Learner(cfg.drones, obs_dim, cfg.ppo(seed))
                meta = learner.load(ckpt)
                if meta.get("config_hash") not in ("", cfg.digest()):
                    click.echo(f"warning: checkpoint trained under config {meta['config_hash']}", err=True)
            records = hs.evaluate(cfg, seed, learner)
            hs.write_config(out / "config.json", cfg, seed)
            hs.write_outputs(out, cfg, seed, records)
            click.echo(str(out))

    _guard(go)


def _obs_dim(cfg: hs.ExperimentConfig) -> int:
    grid = hs.build_grid(cfg)
    if cfg.method == "mappo":
        return 3 * grid.n_cells + 2
    return grid.n_stations + 1 + 2 * grid.n_cells * cfg.slots


@main.command()
@click.argument("runs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default="-", help="Output CSV (default stdout).")
@click.option("--force", is_flag=True, help="Join runs from different configurations.")
def compare(runs, out_path, force) -> None:
    """Mean and sample std over seeds of each metric, per configuration and method."""
    try:
        table = hs.compare(runs, force=force)
    except (ValueError, FileNotFoundError) as exc:
        click.echo(f"compare failed: {exc}", err=True)
        sys.exit(2)
    if out_path == "-":
        click.echo(",".join(hs.COMPARE_HEADER))
        for row in table:
            click.echo(",".join(str(x) for x in row))
    else:
        hs.write_compare(out_path, table)


@main.group()
def plans() -> None:
    """Plan utilities."""


@plans.command("export")
@config_options
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def plans_export(out_path, **kw) -> None:
    """Export every drone's first-period plan groups (departing from its home station)."""
    cfg = load(**kw)

    def go():
        world = hs.build_world(cfg, int(cfg.seeds[0]))
        gen = PlanGenerator(world.grid, world.spec, world.time, cfg.mobility, cfg.origin_hover)
        seed = int(cfg.seeds[0])
        by_drone = {
            u: gen.generate_all(m, cfg.plans, stream(seed, STREAM_PLANS, 0, 0, u))
            for u, m in enumerate(world.fleet.homes)
        }
        export_plans_csv(out_path, by_drone)
        click.echo(out_path)

    _guard(go)


@main.command("config")
@config_options
def show_config(**kw) -> None:
    """Print the resolved configuration with its hash."""
    cfg = load(**kw)
    from dataclasses import asdict

    click.echo(f"# config_hash: {cfg.digest()}")
    click.echo(yaml.safe_dump(asdict(cfg), sort_keys=False).rstrip())


if __name__ == "__main__":  # pragma: no cover
    main()
