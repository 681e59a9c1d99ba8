from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmsense.scenario import (
    DroneFleet,
    GridMap,
    Hotspot,
    InvalidInput,
    ScenarioWorld,
    SensingField,
    TimeStructure,
    TrafficParseError,
    cell_distance,
    distance_matrix,
    export_traffic_csv,
    generate_synthetic_traffic,
    import_traffic_csv,
    round_robin_fleet,
    uniform_stations,
)

GRID8 = GridMap(8, 8, 200.0, uniform_stations(8, 8, 4))
TIME = TimeStructure(periods=3, slots=5)


def test_quarter_point_stations():
    assert uniform_stations(8, 8, 4) == ((2, 2), (2, 6), (6, 2), (6, 6))
    assert len(uniform_stations(4, 4, 2)) == 2


def test_time_structure():
    t = TimeStructure(8, 30, 60.0)
    assert t.horizon == 240
    assert t.period_seconds == 1800.0
    with pytest.raises(InvalidInput):
        TimeStructure(0, 30)


def test_station_outside_grid_rejected():
    with pytest.raises(InvalidInput):
        GridMap(4, 4, 200.0, ((4, 0),))
    with pytest.raises(InvalidInput):
        GridMap(4, 4, 200.0, ())


def test_distances():
    assert cell_distance(GRID8, 9, 9) == 0.0
    assert cell_distance(GRID8, 0, 1) == pytest.approx(200.0)
    assert cell_distance(GRID8, 0, 9) == pytest.approx(200.0 * math.sqrt(2))
    with pytest.raises(InvalidInput):
        cell_distance(GRID8, 0, 64)


def test_distance_matrix_matches_pairwise():
    d = distance_matrix(GRID8)
    for a, b in [(0, 63), (5, 40), (17, 17)]:
        assert d[a, b] == pytest.approx(cell_distance(GRID8, a, b))


@given(st.integers(0, 63))
def test_row_major_round_trip(n):
    assert GRID8.index(*GRID8.coord(n)) == n


@given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 63))
def test_distance_metric_axioms(a, b, c):
    ab, ba = cell_distance(GRID8, a, b), cell_distance(GRID8, b, a)
    assert ab == ba
    assert cell_distance(GRID8, a, c) <= ab + cell_distance(GRID8, b, c) + 1e-9


def test_degenerate_hotspot():
    spot = Hotspot(center=10, peak=7.0, spread=0.0)
    field = generate_synthetic_traffic(GRID8, TIME, [spot], noise=0.0).required
    assert np.all(field[:, 10, :] == 7.0)
    mask = np.ones(64, bool)
    mask[10] = False
    assert np.all(field[:, mask, :] == 0.0)


def test_no_hotspots_gives_zero_field():
    assert not generate_synthetic_traffic(GRID8, TIME, []).required.any()


def test_symmetric_hotspots_reflect():
    a = Hotspot(GRID8.index(1, 2), 5.0, 1.3)
    b = Hotspot(GRID8.index(1, 5), 5.0, 1.3)  # mirror image across the vertical axis
    field = generate_synthetic_traffic(GRID8, TIME, [a, b], noise=0.0).required
    grid = field.reshape(3, 8, 8, 5)
    assert np.allclose(grid, grid[:, :, ::-1, :], rtol=0, atol=1e-12)
    # closed-form value at one cell
    r, c = 4, 0
    expect = sum(5.0 * math.exp(-((r - rr) ** 2 + (c - cc) ** 2) / (2 * 1.3**2)) for rr, cc in [(1, 2), (1, 5)])
    assert field[0, GRID8.index(r, c), 0] == pytest.approx(expect, rel=1e-12)


def test_temporal_profiles():
    per_period = Hotspot(0, 1.0, 0.0, profile=(1.0, 2.0, 0.5))
    f = generate_synthetic_traffic(GRID8, TIME, [per_period], noise=0.0).required
    assert list(f[:, 0, 2]) == [1.0, 2.0, 0.5]
    with pytest.raises(InvalidInput):
        generate_synthetic_traffic(GRID8, TIME, [Hotspot(0, 1.0, 0.0, profile=(1.0,))])


def test_traffic_is_seed_deterministic_and_noise_bounded():
    spot = [Hotspot(20, 10.0, 1.0)]
    a = generate_synthetic_traffic(GRID8, TIME, spot, seed=3).required
    b = generate_synthetic_traffic(GRID8, TIME, spot, seed=3).required
    c = generate_synthetic_traffic(GRID8, TIME, spot, seed=4).required
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert 9.0 <= a[0, 20, 0] <= 11.0


def test_invalid_hotspots():
    with pytest.raises(InvalidInput):
        generate_synthetic_traffic(GRID8, TIME, [Hotspot(64, 1.0, 1.0)])
    with pytest.raises(InvalidInput):
        generate_synthetic_traffic(GRID8, TIME, [Hotspot(0, -1.0, 1.0)])


def test_sensing_field_invariants():
    with pytest.raises(InvalidInput):
        SensingField(required=-np.ones((1, 2, 2)))
    req = np.ones((1, 2, 2))
    with pytest.raises(InvalidInput):
        SensingField(required=req, collected=2 * req)


def write(tmp_path, body: str):
    p = tmp_path / "traffic.csv"
    p.write_text(body, encoding="utf-8")
    return p


def test_import_single_row(tmp_path):
    f = import_traffic_csv(write(tmp_path, "period,cell,slot,value\n1,5,3,42.0\n"), GRID8, TIME).required
    assert np.count_nonzero(f) == 1
    assert f[0, 4, 2] == 42.0


def test_import_empty_body(tmp_path):
    f = import_traffic_csv(write(tmp_path, "period,cell,slot,value\n"), GRID8, TIME).required
    assert not f.any()


@pytest.mark.parametrize(
    "body,line",
    [
        ("period,cell,slot,value\n1,65,1,1.0\n", 2),
        ("period,cell,slot,value\n1,1,1,1.0\n1,2,1,-3\n", 3),
        ("period,cell,slot,value\n1,1,1,1.0\n1,1,1,2.0\n", 3),
        ("period,cell,slot,value\n1,1,x,1.0\n", 2),
        ("period,cell,slot,value\n1,1,1\n", 2),
        ("t,n,s,v\n", 1),
    ],
)
def test_import_errors_name_the_line(tmp_path, body, line):
    with pytest.raises(TrafficParseError) as err:
        import_traffic_csv(write(tmp_path, body), GRID8, TIME)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_export_import_round_trip(tmp_path):
    field = generate_synthetic_traffic(GRID8, TIME, [Hotspot(3, 4.0, 1.0)], seed=1)
    path = tmp_path / "out.csv"
    export_traffic_csv(path, field)
    raw = path.read_bytes()
    assert raw.startswith(b"period,cell,slot,value\n") and b"\r" not in raw
    back = import_traffic_csv(path, GRID8, TIME)
    assert np.array_equal(back.required, field.required)


def test_fleet_and_world_validation():
    fleet = round_robin_fleet(5, 4)
    assert fleet.homes == (0, 1, 2, 3, 0)
    with pytest.raises(InvalidInput):
        ScenarioWorld(GRID8, TIME, DroneFleet(homes=(7,)), ())
    with pytest.raises(InvalidInput):
        ScenarioWorld(GRID8, TIME, fleet, (SensingField(np.zeros((1, 64, 5))),))
