import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoneids.netsim import (
    DOWN,
    SERVER,
    UP,
    LinkModel,
    ScriptedOutcome,
    SimClock,
    await_with_timeout,
    load_schedule,
    transmit,
)


def test_fixed_delay_arithmetic():
    d = transmit(LinkModel(), None, SERVER, 1, SimClock(10.0), round_index=1)
    assert d.delivered_at == 10.25
    assert d.direction == DOWN


def test_scripted_drop_beats_loss_probability():
    link = LinkModel(loss_probability=0.0)
    link.script(3, 2, DOWN, ScriptedOutcome(drop=True))
    assert transmit(link, None, SERVER, 2, SimClock(), 3).dropped
    assert not transmit(link, None, SERVER, 2, SimClock(), 2).dropped
    assert not transmit(link, None, 2, SERVER, SimClock(), 3).dropped
    lossy = LinkModel(loss_probability=1.0)
    lossy.script(1, 0, UP, ScriptedOutcome())
    assert not transmit(lossy, None, 0, SERVER, SimClock(), 1).dropped


def test_total_loss_always_drops():
    link = LinkModel(loss_probability=1.0)
    for r in range(1, 20):
        for z in range(4):
            assert transmit(link, None, z, SERVER, SimClock(), r).dropped


def test_await_received_within_timeout():
    clock = SimClock(5.0)
    d = transmit(LinkModel(), None, 0, SERVER, clock, 1)
    assert await_with_timeout(d, 50.0, clock)
    assert clock.now == 5.25


def test_await_dropped_times_out_at_deadline():
    clock = SimClock(2.0)
    link = LinkModel(loss_probability=1.0)
    trace = []
    d = transmit(link, None, 0, SERVER, clock, 1)
    assert not await_with_timeout(d, 50.0, clock, trace)
    assert clock.now == 52.0
    assert trace[0].received is False and trace[0].zone == 0 and trace[0].direction == UP


def test_await_late_delivery_times_out():
    link = LinkModel()
    link.script(1, 0, DOWN, ScriptedOutcome(delay=60.0))
    clock = SimClock()
    assert not await_with_timeout(transmit(link, None, SERVER, 0, clock, 1), 50.0, clock)
    assert clock.now == 50.0
    with pytest.raises(ValueError):
        await_with_timeout(transmit(link, None, SERVER, 0, clock, 1), 0.0, clock)


def test_link_validation():
    for kw in ({"one_way_delay": -1}, {"jitter": -0.1}, {"loss_probability": 1.5}):
        with pytest.raises(ValueError):
            LinkModel(**kw)
    assert LinkModel.leo().one_way_delay == 0.02
    assert LinkModel.geo().one_way_delay == 0.25


def _trace(seed):
    link = LinkModel(loss_probability=0.4, jitter=0.3, seed=seed)
    clock, out = SimClock(), []
    for r in range(1, 6):
        for z in range(4):
            await_with_timeout(transmit(link, None, z, SERVER, clock, r), 50.0, clock, out)
            await_with_timeout(transmit(link, None, SERVER, z, clock, r), 50.0, clock, out)
    return out


def test_traces_are_deterministic():
    assert _trace(7) == _trace(7)
    assert _trace(7) != _trace(8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 2), st.floats(0, 1))
def test_clock_never_moves_backwards(seed, loss, jitter, delay):
    link = LinkModel(one_way_delay=delay, loss_probability=loss, jitter=jitter, seed=seed)
    clock = SimClock()
    last = clock.now
    for r in range(1, 4):
        pending = [transmit(link, None, z, SERVER, clock, r) for z in range(3)]
        for d in pending:
            await_with_timeout(d, 50.0, clock)
            assert clock.now >= last
            last = clock.now


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 5), st.floats(0, 5))
def test_lossless_link_always_delivers(seed, delay, jitter):
    link = LinkModel(one_way_delay=delay, jitter=jitter, seed=seed)
    clock = SimClock()
    for z in range(4):
        assert await_with_timeout(transmit(link, None, SERVER, z, clock, 1), delay + jitter + 1, clock)


def test_load_schedule(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("round,zone,direction,outcome\n2,1,down,drop\n3,0,UP,ok\n1,2,down,60\n")
    sched = load_schedule(p)
    assert sched == {(2, 1, DOWN): ScriptedOutcome(drop=True), (3, 0, UP): ScriptedOutcome(),
                     (1, 2, DOWN): ScriptedOutcome(delay=60.0)}
    p.write_text("round,zone,direction,outcome\n1,1,sideways,drop\n")
    with pytest.raises(ValueError):
        load_schedule(p)
