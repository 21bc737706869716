import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindsim.coherence import Served, State, WritebackRecord
from mindsim.fabric import MsgKind
from mindsim.protection import DenyReason

from _system import PAGE, R, W, rig


def test_first_read_is_one_fetch():
    r = rig()
    out = r.access(0, 0, R)
    assert out.served is Served.REMOTE
    assert out.transition == (State.I, State.S)
    assert out.latency == pytest.approx(9.0)


def test_write_to_remote_modified_region_is_sequential():
    r = rig()
    r.access(0, 0, W, now=0.0)
    out = r.access(1, 0, W, now=1000.0)
    assert out.transition == (State.M, State.M)
    assert out.latency == pytest.approx(18.0)


def test_local_write_hit_sends_nothing():
    r = rig()
    r.access(0, 0, W, seq=1)
    sent = sum(r.fabric.sent.values())
    out = r.access(0, 0, W, seq=2)
    assert out.served is Served.LOCAL
    assert out.latency == pytest.approx(0.1)
    assert (out.invalidations_sent, out.pages_flushed, out.false_invalidations) == (0, 0, 0)
    assert sum(r.fabric.sent.values()) == sent
    assert r.engine.coherent_value(r.page(0)) == (0, 2)


def test_read_cached_page_faults_on_write():
    r = rig()
    r.access(0, 0, R)
    out = r.access(0, 0, W, now=100.0)
    assert out.served is Served.REMOTE
    assert out.transition == (State.S, State.M)


def test_invalidation_only_reaches_sharers():
    r = rig()
    for blade in (0, 1, 2):
        r.access(blade, 0, R, now=100.0 * blade)
    out = r.access(0, 0, W, now=1000.0)
    assert out.invalidations_sent == 2
    recipients = sorted(rec.recipient for rec in r.engine.log)
    assert recipients == [1, 2]
    assert out.latency == pytest.approx(9.0)  # parallel with the fetch
    assert 3 not in r.engine.caches or not r.engine.caches[3].pages


def test_false_invalidations_count_other_dirty_pages():
    r = rig(region_size=8 * PAGE)
    for i in range(5):
        r.access(0, i, W, now=10.0 * i, seq=i + 1)
    out = r.access(1, 2, W, now=1000.0, seq=10)
    assert out.pages_flushed == 5
    assert out.false_invalidations == 4
    assert sum(r.policy.false.values()) == 4


def test_shared_region_has_nothing_to_flush():
    r = rig()
    r.access(0, 0, R)
    r.access(1, 1, R, now=100.0)
    out = r.access(2, 0, W, now=200.0)
    assert (out.pages_flushed, out.false_invalidations) == (0, 0)


def test_downgrade_keeps_old_owner_as_clean_sharer():
    r = rig()
    r.access(0, 0, W, seq=1)
    out = r.access(1, 0, R, now=1000.0, seq=2)
    assert out.transition == (State.M, State.S)
    assert out.latency == pytest.approx(18.0)
    assert out.value == (0, 1)
    entry = r.engine.directory.find(r.page(0))
    assert entry.sharers == {0, 1} and entry.owner is None
    again = r.access(0, 0, R, now=2000.0)
    assert again.served is Served.LOCAL
    assert not r.engine.cache(0).pages[r.page(0)].dirty


def test_eviction_writes_back_only_dirty_pages():
    r = rig(cache_pages=2)
    r.access(0, 0, W, seq=1)
    r.access(0, 1, R, now=10.0)
    assert r.engine.handle_eviction(0, r.page(1)) == 0
    assert r.engine.handle_eviction(0, r.page(0)) == 1
    assert r.fabric.sent[MsgKind.WRITEBACK] == 1
    assert r.engine.coherent_value(r.page(0)) == (0, 1)
    # sharer membership survives eviction
    assert 0 in r.engine.directory.find(r.page(0)).sharers


def test_cache_evicts_least_recently_used():
    r = rig(cache_pages=3)
    model = OrderedDict()
    rng = random.Random(4)
    for step in range(200):
        i = rng.randrange(8)
        r.access(0, i, R, now=step * 20.0)
        model[i] = True
        model.move_to_end(i)
        while len(model) > 3:
            model.popitem(last=False)
        assert list(r.engine.cache(0).pages) == [r.page(p) for p in model]


def test_capacity_eviction_of_dirty_page_is_logged():
    r = rig(cache_pages=1)
    r.access(0, 0, W, seq=1)
    out = r.access(0, 1, W, now=100.0, seq=2)
    assert out.writebacks == 1
    assert r.engine.log[-1] == WritebackRecord(2, 0, r.page(0), "evict")


def test_reset_flushes_and_removes_entry():
    r = rig()
    for i in range(3):
        r.access(0, i, W, now=10.0 * i, seq=i + 1)
    assert r.engine.reset_address(r.page(0)) == 3
    assert r.engine.directory.find(r.page(0)) is None
    assert not r.engine.cache(0).pages
    out = r.access(1, 1, R, now=500.0)
    assert out.transition == (State.I, State.S)
    assert out.value == (0, 2)
    assert r.engine.reset_address(r.page(100)) == 0


def test_denied_access_changes_nothing():
    r = rig()
    out = r.access(0, 0, W, pdid=9)
    assert out.served is Served.DENIED and out.deny is DenyReason.NO_ENTRY
    assert len(r.engine.directory) == 0
    assert not r.fabric.sent


scripts = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 11), st.booleans()), min_size=1, max_size=80)


@given(scripts, st.sampled_from([PAGE, 4 * PAGE, 16 * PAGE]), st.integers(1, 6))
@settings(max_examples=150, deadline=None)
def test_reads_see_latest_write_and_invariants_hold(script, region, cache_pages):
    r = rig(region_size=region, cache_pages=cache_pages)
    latest = {}
    for seq, (blade, i, write) in enumerate(script, 1):
        out = r.access(blade, i, W if write else R, now=seq * 50.0, seq=seq)
        if write:
            latest[i] = (blade, seq)
        else:
            assert out.value == latest.get(i)
        assert r.engine.check_invariants() == []
    for i, tag in latest.items():
        assert r.engine.coherent_value(r.page(i)) == tag


@given(scripts)
@settings(max_examples=150, deadline=None)
def test_page_sized_regions_never_falsely_invalidate(script):
    r = rig(region_size=PAGE)
    for seq, (blade, i, write) in enumerate(script, 1):
        assert r.access(blade, i, W if write else R, now=seq * 50.0, seq=seq).false_invalidations == 0


@given(scripts)
@settings(max_examples=300, deadline=None)
def test_halving_a_region_never_adds_false_invalidations(script):
    totals = []
    for size in (8 * PAGE, 4 * PAGE):
        r = rig(region_size=size)
        for seq, (blade, i, write) in enumerate(script, 1):
            r.access(blade, i % 8, W if write else R, now=seq * 50.0, seq=seq)
        totals.append(sum(r.policy.false.values()))
    assert totals[1] <= totals[0]
