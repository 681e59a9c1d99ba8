from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swarmsense.metrics import (
    PeriodMetrics,
    accuracy,
    charging_report,
    efficiency,
    overall,
    period_metrics,
)

V = np.array([[4.0, 2.0], [1.0, 3.0]])


def test_efficiency_examples():
    assert efficiency(V, V) == 1.0
    assert efficiency(np.zeros_like(V), V) == 0.0
    assert efficiency(np.array([[4.0, 0.0], [1.0, 0.0]]), V) == 0.5
    assert efficiency(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ValueError):
        efficiency(np.zeros(3), np.zeros(4))


def test_accuracy_examples():
    assert accuracy(V, V) == 10.0
    assert accuracy(V, V, cap=3.0) == 3.0
    # N*S = 4, squared mismatch 4 -> 1
    assert accuracy(V + np.array([[1.0, -1.0], [1.0, -1.0]]), V) == 1.0
    off = np.array([[0.5, 0.0], [0.0, 0.0]])
    assert accuracy(V + 2 * off, V) == pytest.approx(accuracy(V + off, V) / 2)
    # 2x2, one cell missed by 2: sqrt(4 / 4) = 1
    assert accuracy(np.array([[4.0, 0.0], [1.0, 3.0]]), V) == 1.0


def test_overall_examples():
    assert overall(1.0, 2.0, 0.5) == 2.5
    assert overall(1.0, 2.0, 0.5, 0, 0, 0) == 0.0
    assert overall(1.0, 2.0, 0.5, 3, 3, 3) == pytest.approx(3 * 2.5)


def test_charging_report():
    terminals = [[0, 0, 0], [1, 0, 1]]
    energies = [[0.1, 0.2, 0.3], [0.7, 0.0, 0.5]]
    load, remaining = charging_report(terminals, energies, 2, 1000.0)
    assert load[:, 0] == pytest.approx([600.0, 0.0])
    assert load[:, 1] == pytest.approx([0.0, 1200.0])
    assert remaining[0, 1] == pytest.approx(0.3)
    assert remaining.shape == (3, 2)


@given(
    arrays(np.int64, (4, 5), elements=st.integers(0, 3)),
    arrays(np.float64, (4, 5), elements=st.floats(0, 1)),
)
def test_load_conservation(terms, energy):
    load, _ = charging_report(terms, energy, 4, 159_840.0)
    assert np.allclose(load.sum(axis=0), energy.sum(axis=1) * 159_840.0, rtol=1e-12)
    assert (load >= 0).all()


@given(arrays(np.float64, (3, 3), elements=st.floats(0, 100)), arrays(np.float64, (3, 3), elements=st.floats(0, 1)))
def test_efficiency_bounds_when_collected_is_a_share(required, share):
    assert 0.0 <= efficiency(required * share, required) <= 1.0


def test_period_metrics_bundle():
    pm = period_metrics(V, V, V, [0.1, 0.3], [0, 1], 2, 100.0)
    assert isinstance(pm, PeriodMetrics)
    assert pm.efficiency == 1.0 and pm.accuracy == 10.0
    assert pm.overall == pytest.approx((1 + 10 - 0.1) + (1 + 10 - 0.3))
    assert pm.charging_load == pytest.approx([10.0, 30.0])
    assert pm.remaining_battery == pytest.approx([0.9, 0.7])
    with pytest.raises(ValueError):
        PeriodMetrics(1.5, 1.0, np.zeros(1), 0.0, np.ones(1), np.zeros(1))
