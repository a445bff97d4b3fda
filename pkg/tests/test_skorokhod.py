import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ywlab.skorokhod import JumpPath, TimeChange, d0, feasible, log_norm, sup_distance
from ywlab.suites import shifted_jump_oracle

# brute force over one-knot time changes, computed once and frozen
SHIFTED_ORACLE = 0.22314355131420976


def test_shifted_jump_oracle_frozen():
    assert shifted_jump_oracle() == pytest.approx(SHIFTED_ORACLE, abs=1e-9)
    assert SHIFTED_ORACLE == pytest.approx(math.log(1.25), abs=1e-12)


def test_shifted_jump():
    x = JumpPath([0.0], [0.4], [1.0])
    y = JumpPath([0.0], [0.5], [1.0])
    assert d0(x, y) == pytest.approx(SHIFTED_ORACLE, abs=1e-12)
    assert sup_distance(x, y) == 1.0


def test_distance_capped_by_value_gap():
    # small value gap: aligning jumps costs more than leaving them
    x = JumpPath([0.0], [0.4], [0.1])
    y = JumpPath([0.0], [0.5], [0.1])
    assert d0(x, y) == pytest.approx(0.1, abs=1e-12)


def test_endpoint_values_bound_below():
    x = JumpPath([1.0], [0.5], [2.0])
    y = JumpPath([0.0], [0.5], [2.0])
    assert d0(x, y) == 1.0


def test_jump_count_mismatch():
    x = JumpPath([0.0], [0.3, 0.6], [1.0, 0.0])
    y = JumpPath.constant([0.0])
    assert d0(x, y) == pytest.approx(1.0)


def test_redundant_jumps_dropped():
    x = JumpPath([1.0], [0.2, 0.5], [1.0, 2.0])
    assert x.times.tolist() == [0.5]
    assert x.equals(JumpPath([1.0], [0.5], [2.0]))


def test_from_grid_and_eval():
    x = JumpPath.from_grid([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]])
    assert x(0.49)[0] == 0.0 and x(0.5)[0] == 1.0 and x.horizon == 1.0


def test_path_validation():
    with pytest.raises(ValueError):
        JumpPath([0.0], [0.5, 0.4], [1.0, 2.0])
    with pytest.raises(ValueError):
        JumpPath([0.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        sup_distance(JumpPath.constant(0.0, 1.0), JumpPath.constant(0.0, 2.0))


def test_time_change_log_norm():
    lam = TimeChange([0.0, 0.4, 1.0], [0.0, 0.5, 1.0])
    assert log_norm(lam) == pytest.approx(math.log(1.25))
    assert log_norm(TimeChange.identity()) == 0.0
    inv = lam.inverse()
    assert log_norm(inv) == pytest.approx(log_norm(lam))
    comp = lam.compose(inv)
    assert np.allclose(comp(np.linspace(0, 1, 11)), np.linspace(0, 1, 11))
    with pytest.raises(ValueError):
        TimeChange([0.0, 1.0], [0.0, 0.9])
    with pytest.raises(ValueError):
        log_norm(TimeChange([0.0, 0.5, 1.0], [0.0, 1.0, 1.0]))


def test_feasible_monotone_in_eps():
    x = JumpPath([0.0], [0.4], [1.0])
    y = JumpPath([0.0], [0.5], [1.0])
    assert not feasible(x, y, 0.2)
    assert feasible(x, y, 0.23)
    assert feasible(x, y, 2.0)


def test_multidimensional_paths():
    x = JumpPath([0.0, 0.0], [0.4], [[1.0, 1.0]])
    y = JumpPath([0.0, 0.0], [0.5], [[1.0, 1.0]])
    assert d0(x, y) == pytest.approx(math.log(1.25), abs=1e-12)


_levels = st.integers(-2, 2).map(float)


@st.composite
def jump_paths(draw):
    times = sorted(draw(st.sets(st.integers(1, 19), max_size=3)))
    vals = [draw(_levels) for _ in times]
    return JumpPath([draw(_levels)], np.array(times, float) / 20, vals)


@given(jump_paths(), jump_paths(), jump_paths())
def test_metric_axioms(x, y, z):
    dxy = d0(x, y)
    assert d0(x, x) == 0.0
    assert abs(dxy - d0(y, x)) <= 1e-12
    assert d0(x, z) <= dxy + d0(y, z) + 1e-9
    assert 0.0 <= dxy <= sup_distance(x, y)
    if dxy == 0.0:
        assert x.equals(y)


@given(jump_paths(), st.floats(0.5, 2.0))
def test_time_change_invariance_bound(x, slope):
    # reparametrising by a map with log norm r moves d0 by at most r
    lam = TimeChange([0.0, 0.5, 1.0], [0.0, min(max(0.5 * slope, 0.05), 0.95), 1.0])
    r = log_norm(lam)
    moved = JumpPath(x.initial, np.sort(lam.inverse()(x.times)), x.values)
    assert d0(x, moved) <= r + 1e-9
