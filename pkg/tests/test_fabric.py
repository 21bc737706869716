import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mindsim.coherence import State
from mindsim.fabric import SWITCH, Fabric, LatencyParams, MsgKind, ReliabilityParams, TransitionPlan

from _system import W, ScriptedRandom, rig


def test_default_calibration():
    lat = LatencyParams()
    assert lat.fetch == pytest.approx(9.0)
    assert lat.inval_round() == pytest.approx(9.0)
    f = Fabric()
    assert f.cost_of(TransitionPlan()) == pytest.approx(9.0)
    assert f.cost_of(TransitionPlan(inval_rounds=(lat.inval_round(),), sequential=True)) == pytest.approx(18.0)
    assert f.cost_of(TransitionPlan(inval_rounds=(lat.inval_round(),))) == pytest.approx(9.0)
    assert lat.local_hit == pytest.approx(0.1)


def test_fifo_queueing_at_one_blade():
    f = Fabric()
    msg = f.message(MsgKind.INVAL, SWITCH, SWITCH, 0, {3})
    waits = [f.invalidate(msg, 3, issued_at=0.0).queue_wait for _ in range(8)]
    service = f.latency.blade_inval_service
    assert waits == pytest.approx([i * service for i in range(8)])


def test_lossless_delivers_each_message_once():
    f = Fabric()
    d = f.send_with_reliability(f.message(MsgKind.FETCH_REQ, 0, SWITCH, 0))
    assert (d.delivered, d.attempts, d.penalty) == (True, 1, 0.0)
    assert f.sent[MsgKind.FETCH_REQ] == 1 and f.sent[MsgKind.FETCH_RESP] == 1
    assert not f.lost


def test_message_sequence_numbers_are_unique():
    f = Fabric()
    seqs = {f.message(MsgKind.INVAL, SWITCH, 1, 0).seq for _ in range(100)}
    assert len(seqs) == 100


def test_same_seed_same_losses():
    def pattern(seed):
        f = Fabric(reliability=ReliabilityParams(loss_rate=0.3, seed=seed))
        return [f.send_with_reliability(f.message(MsgKind.FETCH_REQ, 0, SWITCH, 0)).attempts for _ in range(200)]

    assert pattern(5) == pattern(5)
    assert pattern(5) != pattern(6)


def test_one_dropped_invalidation_costs_one_timeout():
    reliability = ReliabilityParams(loss_rate=0.5, timeout=100.0)
    r = rig(reliability=reliability)
    r.fabric._rng = ScriptedRandom([])
    r.access(0, 0, W, now=0.0)
    r.fabric._rng = ScriptedRandom([0.0])  # the first invalidation copy is lost
    out = r.access(1, 0, W, now=1000.0)
    assert out.resets == 0
    assert out.latency == pytest.approx(18.0 + 100.0)
    assert r.fabric.lost[MsgKind.INVAL] == 1


def test_exhausted_retries_reset_and_replay_as_first_touch():
    reliability = ReliabilityParams(loss_rate=0.5, timeout=100.0, max_retries=3)
    r = rig(reliability=reliability)
    r.fabric._rng = ScriptedRandom([])
    r.access(0, 0, W, now=0.0)
    r.fabric._rng = ScriptedRandom([0.0] * 4)  # every attempt at the invalidation is lost
    out = r.access(1, 0, W, now=1000.0, seq=7)
    assert out.resets == 1
    assert out.transition == (State.I, State.M)
    assert r.engine.resets == 1
    assert r.engine.coherent_value(r.page(0)) == (1, 7)
    assert r.engine.fetches_requested == r.engine.fetches_applied + r.engine.fetches_reset


fields = [f.name for f in dataclasses.fields(LatencyParams)]


@given(st.sampled_from(fields), st.floats(0.0, 10.0), st.integers(0, 3), st.booleans())
def test_latency_is_monotone_in_every_parameter(name, bump, rounds, sequential):
    base = LatencyParams()
    raised = dataclasses.replace(base, **{name: getattr(base, name) + bump})

    def cost(lat):
        plan = TransitionPlan(1, tuple(lat.inval_round(w) for w in range(rounds)), sequential)
        return Fabric(lat).cost_of(plan)

    assert cost(raised) >= cost(base)
    assert raised.local_hit >= base.local_hit
