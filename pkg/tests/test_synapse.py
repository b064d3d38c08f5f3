import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fesynapse import device as dev
from fesynapse.synapse import (BINARY, TRISTATE, InvalidStateError, Level, State, SynapseModel,
                               apply_program, from_device_curves, make_binary, make_tristate,
                               matched_binary, weight)

import oracles

probs = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture(scope="module")
def calibrated_curves():
    return dev.population_curves(dev.DeviceParams(), dev.measurement_grid(), 500, 20,
                                 np.random.default_rng(0))


def assert_sound(m: SynapseModel):
    t = m.table
    assert np.all(t >= 0)
    assert np.all(np.abs(t.sum(axis=-1) - 1) <= 1e-12)
    for s, lv in itertools.product(State, Level):
        row = t[s, lv]
        if lv in (Level.WEAK, Level.STRONG):
            assert row[:s].sum() == 0
        if lv == Level.NONE:
            assert row[s] == 1
        if lv == Level.RESET:
            assert row[State.S0] == 1
    for s in State:
        tail_w = np.cumsum(t[s, Level.WEAK][::-1])[::-1]
        tail_s = np.cumsum(t[s, Level.STRONG][::-1])[::-1]
        assert np.all(tail_s >= tail_w - 1e-12)


def test_from_device_curves_operating_points(calibrated_curves):
    m = from_device_curves(calibrated_curves, 2.82, 3.6)
    assert m.kind == TRISTATE
    assert m.table[State.S0, Level.STRONG, State.S2] >= 0.9
    assert 0 < m.table[State.S0, Level.WEAK, State.S1] < 1
    assert m.p_strong > m.p_weak
    assert_sound(m)


def test_from_device_curves_degenerate_points(calibrated_curves):
    with pytest.raises(ValueError):
        from_device_curves(calibrated_curves, 3.0, 3.0)


def test_from_device_curves_out_of_grid(calibrated_curves):
    with pytest.raises(ValueError):
        from_device_curves(calibrated_curves, 1.5, 3.6)


def test_weak_pulse_keeps_s2_mass():
    # a curve with S2 mass at v1 keeps it in the weak row instead of truncating
    c = dev.SwitchCurves([2.0, 4.0], [0.3, 0.0], [0.1, 1.0], 100)
    m = from_device_curves(c, 2.0, 4.0)
    assert m.table[State.S0, Level.WEAK, State.S2] == pytest.approx(0.1)


def test_make_binary_corners():
    m = make_binary(1.0, 0.0)
    rng = np.random.default_rng(0)
    assert all(apply_program(State.S0, Level.STRONG, m, rng) == State.S2 for _ in range(50))
    assert all(apply_program(State.S0, Level.WEAK, m, rng) == State.S0 for _ in range(50))


def test_make_binary_rejects_bad_order():
    with pytest.raises(ValueError):
        make_binary(0.2, 0.5)
    with pytest.raises(ValueError):
        make_binary(0.5, 0.5)


def test_binary_top_state_absorbing():
    m = make_binary(0.9, 0.3)
    rng = np.random.default_rng(0)
    for lv in (Level.WEAK, Level.STRONG, Level.NONE):
        assert all(apply_program(State.S2, lv, m, rng) == State.S2 for _ in range(20))


def test_matched_binary_uses_tristate_probabilities():
    tri = make_tristate(0.3, 0.92, p_weak_s2=0.02)
    b = matched_binary(tri)
    assert b.kind == BINARY
    assert b.table[State.S0, Level.STRONG, State.S2] == pytest.approx(tri.p_strong)
    assert b.table[State.S0, Level.WEAK, State.S2] == pytest.approx(tri.p_weak)
    assert tri.p_weak == pytest.approx(0.32)


def test_binary_rejects_s1():
    m = make_binary(0.9, 0.3)
    with pytest.raises(InvalidStateError):
        apply_program(State.S1, Level.STRONG, m, np.random.default_rng(0))


def test_program_basics():
    m = make_tristate(0.4, 0.9)
    rng = np.random.default_rng(0)
    assert apply_program(State.S2, Level.STRONG, m, rng) == State.S2
    assert apply_program(State.S0, Level.NONE, m, rng) == State.S0
    assert apply_program(State.S2, Level.RESET, m, rng) == State.S0
    assert apply_program(State.S1, Level.WEAK, m, rng) == State.S1


def test_strong_frequency_matches_table():
    m = make_tristate(0.3, 0.95)
    n = 100_000
    u = np.random.default_rng(4).random(n)
    out = m.sample(np.zeros(n, np.int64), np.full(n, Level.STRONG), u)
    freq = float(np.mean(out == State.S2))
    assert abs(freq - 0.95) <= 0.01
    assert abs(freq - 0.95) <= 3 * oracles.binomial_se(0.95, n)


def test_empirical_frequencies_match_every_row():
    m = make_tristate(0.35, 0.9, p_weak_s2=0.05)
    rng = np.random.default_rng(5)
    n = 100_000
    for s, lv in itertools.product(State, Level):
        out = m.sample(np.full(n, s), np.full(n, lv), rng.random(n))
        freq = np.bincount(out, minlength=3) / n
        assert np.allclose(freq, m.table[s, lv], atol=0.01)


def test_weights():
    m = make_tristate(0.3, 0.9)
    assert weight(State.S0, m) == 0
    assert weight(State.S2, m) == 1
    assert weight(State.S1, m) == 0.5


@pytest.mark.parametrize("bad", [
    lambda t: t.__setitem__((0, Level.WEAK), [0.5, 0.6, 0.0]),      # row sum
    lambda t: t.__setitem__((2, Level.WEAK), [0.1, 0.0, 0.9]),      # moves down
    lambda t: t.__setitem__((1, Level.WEAK), [0.0, 0.5, 0.5]),      # S1 + weak must stay
    lambda t: t.__setitem__((0, Level.NONE), [0.0, 1.0, 0.0]),      # NONE not identity
    lambda t: t.__setitem__((1, Level.RESET), [0.0, 1.0, 0.0]),     # RESET not to S0
    lambda t: t.__setitem__((0, Level.STRONG), [0.9, 0.1, 0.0]),    # strong below weak
])
def test_validate_rejects(bad):
    t = make_tristate(0.4, 0.9).table.copy()
    bad(t)
    with pytest.raises(ValueError):
        SynapseModel(TRISTATE, t)


def test_validate_rejects_weight_map_and_voltages():
    t = make_tristate(0.4, 0.9).table
    with pytest.raises(ValueError):
        SynapseModel(TRISTATE, t, weight_map=(0.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        SynapseModel(TRISTATE, t, v_weak=3.6, v_strong=2.82)


def test_json_roundtrip(tmp_path):
    m = make_tristate(0.37, 0.91, p_weak_s2=0.01)
    m.save(tmp_path / "m.json")
    assert SynapseModel.load(tmp_path / "m.json") == m


@settings(max_examples=200)
@given(probs, probs, probs, probs)
def test_constructed_models_are_sound(a, b, c, d):
    p_weak_s1, p_weak_s2 = a * (1 - b), a * b
    p_strong_s2 = max(c, p_weak_s2)
    p_strong_s1 = (1 - p_strong_s2) * d
    # the strong pulse must leave S0 at least as often as the weak one
    if p_strong_s1 + p_strong_s2 < p_weak_s1 + p_weak_s2:
        p_strong_s1 = p_weak_s1 + p_weak_s2 - p_strong_s2
    tri = make_tristate(p_weak_s1, p_strong_s2, p_weak_s2, p_strong_s1)
    assert_sound(tri)
    if tri.p_strong > tri.p_weak:
        assert_sound(matched_binary(tri))


@given(st.integers(0, 2), st.integers(1, 2), st.floats(0, 1, exclude_max=True))
def test_potentiation_never_lowers_state(s, lv, u):
    m = make_tristate(0.4, 0.9, p_weak_s2=0.1)
    assert m.sample(np.array(s), np.array(lv), np.array(u)) >= s
