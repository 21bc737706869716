import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindsim.addrspace import AddressSpace
from mindsim.coherence import Directory, DirectoryEntry, Region, State
from mindsim.simrun.config import SimConfig
from mindsim.simrun.engine import Simulator
from mindsim.simrun.generator import hot_page_trace, random_trace
from mindsim.splitctl import (
    BoundedSplitter,
    SlotPool,
    SplitterConfig,
    compute_threshold,
    global_bound,
    worst_case_subregions,
)
from mindsim.switchres import SwitchBudget

PAGE = 4096
TOP = 2 << 20


def splitter(slots=64, initial=16 * 1024, **kw):
    budget = SwitchBudget(directory_slots=slots)
    space = AddressSpace(PAGE, budget)
    space.register_memory_blade(64 << 20)
    space.alloc_vma(1, TOP)
    directory = Directory(PAGE, TOP)
    s = BoundedSplitter(SplitterConfig(initial_region=initial, **kw), directory, SlotPool(budget), space)
    return s


def test_threshold_examples():
    assert compute_threshold({0: 10, 1: 20, 2: 30}, 3, 1.0) == pytest.approx(20)
    assert compute_threshold([0, 0], 2, 1.0) == math.inf
    assert compute_threshold([10, 20, 30], 3, 2.0) == pytest.approx(10)


@pytest.mark.parametrize("f, t, expected", [(3, 5, 1), (5, 5, 1), (7, 5, 10), (10, 5, 10), (25, 5, 40)])
def test_worst_case_subregions(f, t, expected):
    assert worst_case_subregions(f, t, 512) == expected


def test_global_bound():
    assert global_bound(1, 4, 512) == 40
    assert global_bound(1, 1, 1) == 1
    assert global_bound(2, 4, 512) == 2 * global_bound(1, 4, 512)


def test_count_equal_to_threshold_does_not_split():
    s = splitter()
    entry = s.instantiate(0, 0.0)
    s.record_false_invalidations(entry.region, 5)
    # one allocated top-level region: t = 5 / (c * 1) = 5
    report = s.end_epoch()
    assert report.threshold == 5 and report.splits == 0


def test_count_above_threshold_splits_and_children_inherit():
    s = splitter()
    entry = s.instantiate(0, 0.0)
    entry.state, entry.sharers, entry.owner = State.M, {3}, 3
    other = s.instantiate(TOP // 2, 0.0)
    s.record_false_invalidations(entry.region, 6)
    s.record_false_invalidations(other.region, 0)
    s.c = 2.0  # t = 3
    report = s.end_epoch()
    assert report.splits == 1
    lo, hi = s.directory.get(0), s.directory.get(8 * 1024)
    assert lo.region == Region(0, 8 * 1024) and hi.region == Region(8 * 1024, 8 * 1024)
    assert hi.state is State.M and hi.sharers == {3} and hi.owner == 3
    assert lo.slot != hi.slot


def test_page_sized_region_is_never_split():
    s = splitter(initial=PAGE)
    entry = s.instantiate(0, 0.0)
    s.record_false_invalidations(entry.region, 100)
    s.instantiate(PAGE * 8, 0.0)
    s.c = 64.0
    assert s.end_epoch().splits == 0


def test_split_is_deferred_when_no_slot_is_free():
    s = splitter(slots=1)
    entry = s.instantiate(0, 0.0)
    s.record_false_invalidations(entry.region, 10)
    s.c = 4.0
    report = s.end_epoch()
    assert (report.splits, report.deferred) == (0, 1)
    assert report.capacity_pressure >= 1
    assert s.directory.get(0).region.size == 16 * 1024


def test_quiet_identical_buddies_merge():
    s = splitter()
    a = s.instantiate(0, 0.0)
    b = s.instantiate(16 * 1024, 0.0)
    hot = s.instantiate(TOP // 2, 0.0)
    s.record_false_invalidations(hot.region, 1)
    s.c = 8.0  # t = 1/8: the hot region splits, the idle pair merges
    report = s.end_epoch()
    assert report.merges == 1
    assert s.directory.get(0).region == Region(0, 32 * 1024)
    assert s.directory.get(16 * 1024) is None
    assert len(s.slots) == len(s.directory)
    assert a.slot in s.slots.used.values() and b.slot in s.slots.free


def test_buddies_in_different_states_stay_apart():
    s = splitter()
    s.instantiate(0, 0.0)
    b = s.instantiate(16 * 1024, 0.0)
    b.state, b.sharers = State.S, {1}
    hot = s.instantiate(TOP // 2, 0.0)
    s.record_false_invalidations(hot.region, 1)
    assert s.end_epoch().merges == 0


def test_no_merges_when_nothing_was_falsely_invalidated():
    s = splitter()
    s.instantiate(0, 0.0)
    s.instantiate(16 * 1024, 0.0)
    report = s.end_epoch()
    assert report.threshold == math.inf and report.merges == 0


def test_c_moves_threshold_in_the_right_direction():
    busy = splitter(slots=10)
    for i in range(10):
        busy.instantiate(i * 16 * 1024, 0.0)
    busy.end_epoch()
    assert busy.c < 1.0  # near the cap: larger threshold, fewer splits
    idle = splitter(slots=1000)
    idle.instantiate(0, 0.0)
    idle.end_epoch()
    assert idle.c > 1.0
    fixed = splitter(slots=10, adjust_c=False)
    fixed.end_epoch()
    assert fixed.c == 1.0


def test_slot_pool_partitions_slots():
    budget = SwitchBudget(directory_slots=5)
    pool = SlotPool(budget)
    for base in range(4):
        pool.allocate(base)
    pool.release(2)
    assert sorted([*pool.free, *pool.used.values()]) == list(range(5))
    assert not set(pool.free) & set(pool.used.values())
    pool.allocate(9)
    pool.allocate(10)
    assert pool.allocate(11) is None
    assert budget.used["directory"] == 5


def test_hot_page_settles_at_one_plus_log_m_regions():
    counts = []
    config = SimConfig(initial_region=TOP, epoch_ms=1.0, c_adjust=False)
    sim = Simulator(config, on_epoch=lambda rep, s: counts.append(len(s.directory)))
    sim.run(hot_page_trace(400))
    assert counts[8] == 10
    assert set(counts[8:]) == {10}
    assert counts[:9] == list(range(2, 11))


def _partition_ok(sim):
    regions = sim.directory.regions()
    for a, b in zip(regions, regions[1:]):
        assert a.end <= b.base
    for r in regions:
        assert r.base % r.size == 0 and PAGE <= r.size <= TOP


@given(st.integers(0, 10_000), st.sampled_from([PAGE, 16 * 1024, TOP]))
@settings(max_examples=25, deadline=None)
def test_partition_survives_split_and_merge(seed, initial):
    config = SimConfig(memory_blades=2, blade_capacity=16 << 20, initial_region=initial, epoch_ms=0.2, cache_pages=16)
    sim = Simulator(config, check_invariants=True, on_epoch=lambda rep, s: _partition_ok(s))
    result = sim.run(random_trace(seed, ops=400))
    assert result.summary["events"] == 400
    assert len(sim.slots) == len(sim.directory) == sim.budget.used["directory"]
