from __future__ import annotations

import csv
import json
import time

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from swarmsense import harness as hs
from swarmsense.cli import main


def run(tmp_path, **overrides):
    cfg = hs.make_config("desk", overrides={"output": str(tmp_path), **overrides})
    return cfg, hs.run_experiment(cfg)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- configuration -----------------------------------------------------------------------

def test_basic_defaults():
    cfg = hs.make_config()
    assert (cfg.rows, cfg.cols, cfg.station_count, cfg.periods, cfg.slots, cfg.drones) == (8, 8, 4, 8, 30, 16)
    assert (cfg.plans, cfg.mobility, cfg.gamma, cfg.clip, cfg.hidden, cfg.train_fraction) == (64, 2, 0.95, 0.2, 64, 0.8)


@pytest.mark.parametrize("bad", [
    {"drones": 0}, {"drones": 17}, {"method": "random"}, {"beta": 1.5}, {"plans": 4}, {"days": 1},
    {"traffic_csv": ["/nonexistent.csv"]}, {"nonsense": 1}, {"sweep": {"seeds": [1, 2]}},
])
def test_invalid_configs(bad):
    with pytest.raises(hs.InvalidConfig):
        hs.make_config("desk", overrides=bad)


def test_config_file_then_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "desk", "beta": 0.3, "drones": 6}))
    cfg = hs.make_config("basic", path, {"drones": 5})
    assert (cfg.rows, cfg.beta, cfg.drones) == (4, 0.3, 5)


def test_hash_ignores_method_and_seeds():
    a = hs.make_config("desk", overrides={"method": "greedy", "seeds": [1]})
    b = hs.make_config("desk", overrides={"method": "epos", "seeds": [2, 3]})
    c = hs.make_config("desk", overrides={"beta": 0.9})
    assert a.digest() == b.digest() != c.digest()


def test_day_split():
    assert hs.split_days(10, 0.8) == (list(range(8)), [8, 9])
    assert hs.split_days(2, 0.8) == ([0], [1])


def test_sweep_points():
    cfg = hs.make_config("desk", overrides={"sweep": {"drones": [8, 16], "beta": [0.0, 1.0]}})
    pts = cfg.points()
    assert len(pts) == 4 and len({p.digest() for p in pts}) == 4
    with pytest.raises(hs.InvalidConfig):
        hs.run_experiment(hs.make_config("desk", overrides={"sweep": {"drones": [4, 40]}}))
    assert {(p.drones, p.beta) for p in pts} == {(8, 0.0), (8, 1.0), (16, 0.0), (16, 1.0)}


# --- runs -----------------------------------------------------------------------------------

def test_greedy_smoke_run(tmp_path):
    start = time.perf_counter()
    cfg, dirs = run(tmp_path, method="greedy")
    assert time.perf_counter() - start < 10.0
    (d,) = dirs
    assert d == tmp_path / cfg.digest() / "0" / "greedy"
    rows = read_csv(d / "metrics.csv")
    _, test_days = hs.split_days(cfg.days, cfg.train_fraction)
    assert len(rows) == len(test_days) * cfg.periods * cfg.drones
    assert all(r["config_hash"] == cfg.digest() for r in rows)
    assert read_csv(d / "stations.csv")
    assert json.loads((d / "config.json").read_text())["config_hash"] == cfg.digest()


def test_rerun_is_byte_identical(tmp_path):
    _, (a,) = run(tmp_path / "a", method="epos")
    _, (b,) = run(tmp_path / "b", method="epos")
    for name in ("metrics.csv", "stations.csv", "trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_learning_run_writes_everything(tmp_path):
    cfg, (d,) = run(tmp_path, method="do-rl", episodes=2, hidden=8)
    for name in ("metrics.csv", "stations.csv", "trace.csv", "training.csv", "checkpoint.npz", "config.json"):
        assert (d / name).is_file()
    log = read_csv(d / "training.csv")
    assert [int(r["episode"]) for r in log] == [1, 2]


def test_sweep_fan_out(tmp_path):
    cfg, dirs = run(tmp_path, method="greedy", rows=6, cols=6, sweep={"drones": [8, 16, 32]})
    assert len({d.parent.parent for d in dirs}) == 3
    counts = sorted(len(read_csv(d / "metrics.csv")) for d in dirs)
    assert counts == [2 * 4 * u for u in (8, 16, 32)]


def test_parallel_seeds_match_serial(tmp_path):
    _, serial = run(tmp_path / "s", method="greedy", seeds=[0, 1])
    _, parallel = run(tmp_path / "p", method="greedy", seeds=[0, 1], jobs=2)
    for a, b in zip(serial, parallel):
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_station_loads_conserve_energy(tmp_path):
    cfg, (d,) = run(tmp_path, method="greedy")
    metrics = read_csv(d / "metrics.csv")
    loads = read_csv(d / "stations.csv")
    cap = 159_840.0 if cfg.drone_profile == "phantom4pro" else None
    for k in {int(r["period"]) for r in metrics}:
        e = sum(float(r["energy"]) for r in metrics if int(r["period"]) == k)
        load = sum(float(r["load_joules"]) for r in loads if int(r["period"]) == k)
        assert load == pytest.approx(e * cap, rel=1e-12)


# --- compare -----------------------------------------------------------------------------

def test_compare_identical_runs_zero_std(tmp_path):
    _, (a,) = run(tmp_path / "a", method="greedy")
    _, (b,) = run(tmp_path / "b", method="greedy", seeds=[1])
    # copy seed 0 as a fake second seed with identical values
    clone = tmp_path / "clone" / "metrics.csv"
    clone.parent.mkdir()
    clone.write_text((a / "metrics.csv").read_text().replace("greedy,0,", "greedy,7,"))
    table = hs.compare([a, clone])
    (row,) = table
    assert row[2] == 2
    assert all(float(x) == 0.0 for x in row[4::2])


def test_compare_std_matches_recomputation(tmp_path):
    _, dirs = run(tmp_path, method="greedy", seeds=[0, 1, 2])
    table = hs.compare(dirs)
    (row,) = table
    per_seed = []
    for d in dirs:
        rows = read_csv(d / "metrics.csv")
        per_seed.append(np.mean([float(r["reward"]) for r in rows]))
    col = hs.COMPARE_HEADER.index("reward_std")
    assert float(row[col]) == pytest.approx(np.std(per_seed, ddof=1), rel=1e-12)
    assert float(row[col - 1]) == pytest.approx(np.mean(per_seed), rel=1e-12)


def test_compare_two_methods(tmp_path):
    _, g = run(tmp_path, method="greedy")
    _, e = run(tmp_path, method="epos")
    table = hs.compare(g + e)
    assert [r[1] for r in table] == ["epos", "greedy"]
    out = tmp_path / "cmp.csv"
    hs.write_compare(out, table)
    assert read_csv(out)[0].keys() == set(hs.COMPARE_HEADER) or list(read_csv(out)[0]) == hs.COMPARE_HEADER


def test_compare_rejects_schema_and_hash_mismatch(tmp_path):
    _, (a,) = run(tmp_path / "a", method="greedy")
    _, (b,) = run(tmp_path / "b", method="greedy", beta=0.9)
    with pytest.raises(ValueError, match="different configurations"):
        hs.compare([a, b])
    assert len(hs.compare([a, b], force=True)) == 2
    broken = tmp_path / "broken" / "metrics.csv"
    broken.parent.mkdir()
    broken.write_text((a / "metrics.csv").read_text().replace("battery_remaining", "battery"))
    with pytest.raises(ValueError, match="battery_remaining"):
        hs.compare([a, broken])
    with pytest.raises(ValueError):
        hs.compare([a])


# --- CLI ------------------------------------------------------------------------------------

def test_cli_run_and_compare(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["run", "--preset", "desk", "--method", "greedy", "--seeds", "0,1",
                               "--output", str(tmp_path)])
    assert res.exit_code == 0, res.output
    dirs = res.output.split()
    assert len(dirs) == 2
    res = runner.invoke(main, ["compare", *dirs])
    assert res.exit_code == 0
    assert res.output.splitlines()[0] == ",".join(hs.COMPARE_HEADER)


def test_cli_invalid_config_exits_2(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["run", "--preset", "desk", "--set", "drones=0", "--output", str(tmp_path)])
    assert res.exit_code == 2
    assert "drones" in res.output
    res = runner.invoke(main, ["run", "--preset", "nowhere"])
    assert res.exit_code == 2


def test_cli_runtime_failure_exits_1(tmp_path):
    bad = tmp_path / "day.csv"
    bad.write_text("period,cell,slot,value\n1,1,1,-3\n")
    runner = CliRunner()
    res = runner.invoke(main, ["run", "--preset", "desk", "--method", "greedy", "--output", str(tmp_path),
                               "--set", "days=2", "--set", f"traffic_csv=[{bad}, {bad}]"])
    assert res.exit_code == 1
    assert (tmp_path / hs.make_config("desk", overrides={"days": 2, "traffic_csv": [str(bad)] * 2}).digest()
            / "0" / "greedy" / "config.json").is_file()


def test_cli_train_then_eval(tmp_path):
    runner = CliRunner()
    common = ["--preset", "desk", "--method", "do-rl", "--episodes", "2", "--set", "hidden=8",
              "--output", str(tmp_path)]
    res = runner.invoke(main, ["train", *common])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["eval", *common])
    assert res.exit_code == 0, res.output
    d = tmp_path / hs.make_config("desk", overrides={"episodes": 2, "hidden": 8}).digest() / "0" / "do-rl"
    assert (d / "metrics.csv").is_file()
    res = runner.invoke(main, ["train", "--preset", "desk", "--method", "greedy", "--output", str(tmp_path)])
    assert res.exit_code == 2


def test_cli_scenario_plans_and_config(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["scenario", "gen", "--preset", "desk", "--out", str(tmp_path / "traffic")])
    assert res.exit_code == 0
    files = sorted((tmp_path / "traffic").glob("day*.csv"))
    assert len(files) == 10
    # generated traffic feeds back in as a scenario
    res = runner.invoke(main, ["run", "--preset", "desk", "--method", "greedy", "--output", str(tmp_path / "o"),
                               "--set", f"traffic_csv=[{', '.join(map(str, files))}]"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["plans", "export", "--preset", "desk", "--out", str(tmp_path / "plans.csv")])
    assert res.exit_code == 0
    assert (tmp_path / "plans.csv").read_text().startswith("record,drone,direction")
    res = runner.invoke(main, ["config", "--preset", "desk"])
    assert res.exit_code == 0 and res.output.startswith("# config_hash: ")
