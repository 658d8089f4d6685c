import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfed import kernels
from satfed.constellation import build_topology, contact_schedule, satdir_set
from satfed.errors import ClockSkewError, DegenerateInputError
from satfed.sweep import replay_naive, schedule_arrays
from satfed.transport import (
    FLOOD, MISSING, OWN_ONLY, TRANSFER_LOG_COLUMNS, LinkBudget, ModelCache, TimestampedModel,
    TransferRecord, build_transfer_plan, execute_session, freshness, naive_session, redundancy_ratio,
    transfer_log_csv,
)

ETA_F = 1.0 / 6000.0


def tm(owner, t):
    return TimestampedModel(owner, np.full(2, float(owner)), float(t))


def random_caches(rng, m=8, t_now=1000.0):
    dev, sat = ModelCache(0), ModelCache(("sat", 0))
    for cache in (dev, sat):
        for j in range(m):
            if rng.random() < 0.7:
                # small integer grid so equal timestamps show up often
                cache.put(tm(j, float(rng.integers(0, 6)) * 100.0))
    return dev, sat


def test_freshness_properties():
    assert freshness(MISSING, 10.0, ETA_F) == 1.0
    assert freshness(10.0, 10.0, ETA_F) == 0.0
    ages = np.linspace(0, 1e5, 50)
    vals = [freshness(100.0 - a, 100.0, ETA_F) for a in ages]
    assert all(0.0 <= v < 1.0 for v in vals)
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert freshness(0.0, 6000.0, ETA_F) == pytest.approx(1 - math.exp(-1))
    with pytest.raises(ClockSkewError):
        freshness(11.0, 10.0, ETA_F)


def test_cache_only_accepts_strictly_newer():
    c = ModelCache(0)
    assert c.put(tm(1, 5.0)) == (True, None)
    ok, prev = c.put(tm(1, 5.0))
    assert not ok and prev.upload_time == 5.0
    assert not c.put(tm(1, 4.0))[0]
    assert c.put(tm(1, 6.0))[0]
    assert c.timestamp(1) == 6.0 and c.timestamp(2) == MISSING


def test_capacity_evicts_stalest():
    c = ModelCache(0, capacity=2)
    c.put(tm(1, 1.0))
    c.put(tm(2, 2.0))
    assert c.put(tm(3, 3.0))[0]
    assert c.owners() == [2, 3]
    assert not c.put(tm(4, 0.5))[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    dev, sat = random_caches(rng)
    t_now = 1000.0
    plan = build_transfer_plan(dev, sat, t_now, ETA_F, 1e-9)
    up, down = [], []
    for j in range(8):
        a, b = dev.timestamp(j), sat.timestamp(j)
        d = abs(freshness(a, t_now, ETA_F) - freshness(b, t_now, ETA_F))
        if a != b and d > 1e-9:
            (up if a > b else down).append((j, d))
    key = lambda e: (-e[1], e[0])  # noqa: E731
    assert plan.upload == sorted(up, key=key)
    assert plan.download == sorted(down, key=key)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unlimited_session_is_max_merge(seed):
    rng = np.random.default_rng(seed)
    dev, sat = random_caches(rng)
    before = {j: max(dev.timestamp(j), sat.timestamp(j)) for j in range(8)}
    plan = build_transfer_plan(dev, sat, 1000.0, ETA_F)
    log = execute_session(plan, dev, sat, LinkBudget.unlimited(), t_now=1000.0)
    for j in range(8):
        assert dev.timestamp(j) == before[j] and sat.timestamp(j) == before[j]
    assert all(r.completed and r.accepted for r in log)


def test_budgeted_session_sends_sorted_prefix():
    dev, sat = ModelCache(0), ModelCache("s")
    for j, t in enumerate([100.0, 400.0, 200.0, 900.0, 50.0]):
        dev.put(tm(j, t))
    plan = build_transfer_plan(dev, sat, 1000.0, ETA_F)
    budget = LinkBudget(uplink_rate=2.5, downlink_rate=1.0, model_size=1.0, window_remaining=1.0)
    log = execute_session(plan, dev, sat, budget, t_now=1000.0)
    done = [r.owner for r in log if r.completed]
    assert done == [j for j, _ in plan.upload[:2]]
    # against a missing copy the gap is exp(-eta_f * age): newest goes first
    assert done == [3, 1]
    partial = [r for r in log if not r.completed]
    assert len(partial) == 1 and partial[0].owner == plan.upload[2][0]
    assert sat.owners() == [1, 3]


def test_large_model_budget():
    b = LinkBudget(10.0, 100.0, 784.0, 600.0)
    assert b.max_uploads == 7
    assert b.max_downloads == 76
    assert LinkBudget(10.0, 100.0, 1.0, 600.0).max_uploads == 6000


def test_no_echo_of_just_uploaded_model():
    dev, sat = ModelCache(0), ModelCache("s")
    dev.put(tm(0, 10.0))
    sat.put(tm(1, 5.0))
    plan = build_transfer_plan(dev, sat, 20.0, ETA_F)
    log = execute_session(plan, dev, sat, LinkBudget.unlimited(), t_now=20.0)
    assert [(r.direction, r.owner) for r in log] == [("up", 0), ("down", 1)]


def test_naive_modes():
    dev, sat = ModelCache(3), ModelCache("s")
    dev.put(tm(3, 0.0))
    dev.put(tm(7, 0.0))
    log = naive_session(OWN_ONLY, dev, sat, LinkBudget.unlimited(), device_id=3)
    assert sat.owners() == [3]
    assert [r.owner for r in log if r.direction == "up"] == [3]
    # the satellite never sends a device its own model back
    assert not [r for r in log if r.direction == "down"]
    log = naive_session(FLOOD, dev, sat, LinkBudget.unlimited(), device_id=3)
    assert sat.owners() == [3, 7]
    dups = [r for r in log if r.completed and not r.accepted]
    assert dups, "flood re-sends copies the satellite already holds"


def test_redundancy_ratio():
    def rec(accepted, completed=True):
        return TransferRecord(0.0, 0, 0, "up", 0, 0.0, completed, accepted)
    assert redundancy_ratio([rec(True), rec(True)]) == 1.0
    assert redundancy_ratio([rec(True), rec(False), rec(False), rec(True, completed=False)]) == 3.0
    with pytest.raises(DegenerateInputError):
        redundancy_ratio([])
    with pytest.raises(DegenerateInputError):
        redundancy_ratio([rec(False)])


def test_transfer_log_csv():
    recs = [TransferRecord(1.5, 2, 3, "down", 4, 0.25, True, True)]
    text = transfer_log_csv(recs)
    lines = text.split("\n")
    assert lines[0] == ",".join(TRANSFER_LOG_COLUMNS)
    assert lines[1] == "1.5,2,3,down,4,0.25,1"
    assert "\r" not in text


def object_replay(topo, windows, mode, interval, budget):
    """Reference replay through ModelCache / naive_session."""
    devs = {i: ModelCache(i) for i in range(topo.m)}
    for i in range(topo.m):
        devs[i].put(tm(i, 0.0))
    sats = {}
    total = necessary = 0
    for w in windows:
        orbit = topo.orbit_of_satellite[w.satellite_id]
        sat = sats.setdefault(orbit, ModelCache(("sat", orbit)))
        i = w.device_id
        if interval <= 0:
            ver = w.start
        elif math.isinf(interval):
            ver = 0.0
        else:
            ver = math.floor(w.start / interval) * interval
        devs[i].put(tm(i, ver))
        for r in naive_session(mode, devs[i], sat, budget, t_now=w.start, device_id=i):
            if r.completed:
                total += 1
                necessary += r.accepted
    return total, necessary, devs


@pytest.mark.parametrize("mode", [OWN_ONLY, FLOOD])
@pytest.mark.parametrize("interval", [0.0, 6000.0, math.inf])
@pytest.mark.parametrize("limited", [False, True])
def test_replay_kernel_matches_object_route(mode, interval, limited):
    topo = build_topology(24, 6, 5, 2, seed=8)
    windows = contact_schedule(topo, 6000.0, 600.0, 24000.0, seed=9)
    budget = LinkBudget(0.01, 0.02, 1.0, 300.0) if limited else LinkBudget.unlimited()
    total, necessary, devs = object_replay(topo, windows, mode, interval, budget)
    res = replay_naive(topo, windows, mode, budget if limited else None, version_interval=interval)
    assert (res.transfers, res.necessary) == (total, necessary)
    for i in range(topo.m):
        for j in range(topo.m):
            assert res.dev_ts[i, j] == devs[i].timestamp(j)


def test_own_only_reaches_exactly_satdir():
    topo = build_topology(40, 8, 6, 2, seed=1, repair=True)
    windows = contact_schedule(topo, 6000.0, 600.0, 20 * 6000.0, seed=2)
    res = replay_naive(topo, windows, OWN_ONLY)
    for i in range(topo.m):
        owners = set(np.flatnonzero(res.dev_ts[i] > -np.inf).tolist())
        assert owners == satdir_set(topo, i) | {i}


def test_flood_reaches_connected_component():
    topo = build_topology(40, 8, 6, 2, seed=1, repair=True)
    windows = contact_schedule(topo, 6000.0, 600.0, 60 * 6000.0, seed=2)
    res = replay_naive(topo, windows, FLOOD)
    # reachability closure of SatDir
    R = topo.satdir.copy()
    for _ in range(topo.m):
        R = R | ((R.astype(int) @ R.astype(int)) > 0)
    for i in range(topo.m):
        owners = set(np.flatnonzero(res.dev_ts[i] > -np.inf).tolist())
        assert owners == set(np.flatnonzero(R[i]).tolist()) | {i}


def test_replay_monotone_caches():
    topo = build_topology(20, 5, 5, 2, seed=3)
    windows = contact_schedule(topo, 6000.0, 600.0, 30000.0, seed=4)
    times, devices, holders, nh = schedule_arrays(topo, windows)
    dev = np.full((20, 20), -np.inf)
    np.fill_diagonal(dev, 0.0)
    sat = np.full((nh, 20), -np.inf)
    prev_d, prev_s = dev.copy(), sat.copy()
    for k in range(len(times)):
        kernels.naive_replay_np(times[k:k + 1], devices[k:k + 1], holders[k:k + 1], dev, sat,
                                kernels.MODE_FLOOD, -1, -1, 0.0)
        assert (dev >= prev_d).all() and (sat >= prev_s).all()
        prev_d, prev_s = dev.copy(), sat.copy()
