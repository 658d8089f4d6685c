import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfed.errors import ClockSkewError
from satfed.multigraph import (
    Multigraph, SpeedRecord, adaptive_lr, connection_value, dependency, graph_csv, merge_graph,
    peer_guide, refresh_connection, update_computation, update_connection, update_scale,
    update_similarity,
)
from satfed.transport import ModelCache, TimestampedModel


def tm(owner, vec, t):
    return TimestampedModel(owner, np.asarray(vec, dtype=float), float(t))


def test_similarity_equal_stamps_is_cosine():
    G = Multigraph(3)
    val = update_similarity(G, 0, 1, tm(0, [1, 0], 5), tm(1, [1, 1], 5), tau_conf=100.0)
    assert val == pytest.approx(1 / math.sqrt(2))
    assert G.sim[0, 1] == G.sim[1, 0] == val
    assert G.sim_at[0, 1] == G.sim_at[1, 0] == 5.0


def test_similarity_ema_weight_decays_with_stamp_gap():
    G = Multigraph(2)
    G.sim[0, 1] = G.sim[1, 0] = 0.2
    val = update_similarity(G, 0, 1, tm(0, [1, 0], 300), tm(1, [1, 0], 100), tau_conf=100.0, t_now=300)
    k = math.exp(-2.0)
    assert val == pytest.approx(k * 1.0 + (1 - k) * 0.2)


def test_similarity_zero_vector_keeps_old_value():
    G = Multigraph(2)
    G.sim[0, 1] = 0.4
    assert update_similarity(G, 0, 1, tm(0, [0, 0], 1), tm(1, [1, 0], 1), 10.0) == 0.4


def test_connection_formula_and_window():
    G = Multigraph(3, window=100.0)
    for t in (10.0, 20.0, 150.0):
        G.record_server_contact(1, t)
    G.record_server_contact(0, 140.0)
    G.record_delivery(0, 1, 120.0)
    G.record_delivery(0, 1, 130.0)
    # window (60, 160]: C_S^1 = 1, C_D^{01} = 2, C_S^0 = 1
    assert connection_value(G, 0, 1, 0.5, 160.0) == pytest.approx((1 + 0.5 * 2) / 1)
    # device 2 never reached the server: denominator floors at 1
    assert connection_value(G, 2, 1, 1.0, 160.0) == pytest.approx(1.0)
    assert update_connection(G, 0, 1, 0.5, 160.0) == G.con[0, 1]
    assert G.con_at[0, 1] == 160.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 500)), max_size=30),
       st.lists(st.tuples(st.integers(0, 3), st.floats(0, 500)), max_size=30))
def test_refresh_connection_matches_pointwise(deliveries, contacts):
    G = Multigraph(4, window=200.0)
    for i, j, t in sorted(deliveries, key=lambda x: x[2]):
        G.record_delivery(i, j, t)
    for i, t in sorted(contacts, key=lambda x: x[1]):
        G.record_server_contact(i, t)
    refresh_connection(G, 0.7, 400.0)
    for i in range(4):
        for j in range(4):
            if i != j:
                assert G.con[i, j] == pytest.approx(connection_value(G, i, j, 0.7, 400.0))
    assert np.all(np.diag(G.con) == 1.0)


def test_speed_record():
    r = SpeedRecord()
    assert not r.observe(np.zeros(2), 0.0)
    assert r.speed is None
    assert r.observe(np.array([3.0, 4.0]), 10.0)
    assert r.speed == pytest.approx(0.5)
    assert not r.observe(np.zeros(2), 10.0)


def test_computation_edges_reciprocal():
    G = Multigraph(2)
    fast, slow = SpeedRecord(speed=5.0), SpeedRecord(speed=1.0)
    assert update_computation(G, 0, 1, slow, SpeedRecord(), 1.0) is None
    assert update_computation(G, 0, 1, slow, fast, 2.0) == pytest.approx(5.0)
    assert G.cmp[1, 0] == pytest.approx(0.2)
    assert update_scale(G, 0) == pytest.approx(3.0)
    assert update_scale(G, 1) == pytest.approx(0.6)


def test_adaptive_lr():
    G = Multigraph(3)
    assert adaptive_lr(G, 0, 0.1, 1.0) == 0.1
    G.cmp[0] = [1.0, 4.0, 7.0]
    assert adaptive_lr(G, 0, 0.1, 2.0) == pytest.approx(0.1 * (1 + 2 * math.log(4.0)))
    G.cmp[1] = [0.25, 1.0, 0.5]
    assert adaptive_lr(G, 1, 0.1, 2.0) == 0.1


def test_peer_guide_weights():
    G = Multigraph(3)
    G.sim[0, 1], G.sim[0, 2] = 0.5, 0.2
    G.con[0, 1], G.con[0, 2] = 2.0, 0.0
    cache = ModelCache(0)
    cache.put(tm(0, [9.0, 9.0], 100))
    cache.put(tm(1, [1.0, 0.0], 100))
    cache.put(tm(2, [0.0, 1.0], 0))
    alpha, tau = 0.1, 100.0
    w1 = math.exp(0) * (0.5 + alpha * 2.0)
    w2 = math.exp(-1.0) * 0.2
    expect = (w1 * np.array([1.0, 0.0]) + w2 * np.array([0.0, 1.0])) / (w1 + w2)
    np.testing.assert_allclose(peer_guide(cache, G, 100.0, alpha, tau), expect)
    assert dependency(G, 0, 1, alpha) == pytest.approx(0.7)


def test_peer_guide_none_cases():
    G = Multigraph(2)
    cache = ModelCache(0)
    assert peer_guide(cache, G, 0.0, 0.1, 10.0) is None
    cache.put(tm(0, [1.0], 0))
    assert peer_guide(cache, G, 0.0, 0.1, 10.0) is None
    cache.put(tm(1, [1.0], 0))
    G.sim[0, 1], G.con[0, 1] = -1.0, 0.0
    assert peer_guide(cache, G, 0.0, 0.1, 10.0) is None


def stamped_graph(rng, m=4, t_max=100.0):
    G = Multigraph(m)
    for name in ("sim", "con", "cmp"):
        mask = rng.random((m, m)) < 0.5
        getattr(G, name)[mask] = rng.normal(size=mask.sum())
        getattr(G, name + "_at")[mask] = rng.integers(0, int(t_max), size=mask.sum()).astype(float)
    return G


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merge_is_last_writer_wins(seed):
    rng = np.random.default_rng(seed)
    a, b = stamped_graph(rng), stamped_graph(rng)
    out = merge_graph(a, b)
    for name in ("sim", "con", "cmp"):
        at_a, at_b = getattr(a, name + "_at"), getattr(b, name + "_at")
        pick_b = at_b > at_a
        np.testing.assert_array_equal(getattr(out, name), np.where(pick_b, getattr(b, name), getattr(a, name)))
        np.testing.assert_array_equal(getattr(out, name + "_at"), np.maximum(at_a, at_b))
    assert merge_graph(a, a).equals(a)
    # merging the same delta twice changes nothing
    assert merge_graph(out, b).equals(out)


def test_merge_rejects_future_entries():
    a, b = Multigraph(2), Multigraph(2)
    b.sim_at[0, 1] = 50.0
    with pytest.raises(ClockSkewError):
        merge_graph(a, b, t_now=10.0)


def test_merge_counters():
    srv, dev = Multigraph(2), Multigraph(2)
    srv.record_server_contact(0, 5.0)
    dev.record_delivery(0, 1, 7.0)
    merged = merge_graph(srv, dev)
    assert merged.cs_events[0] == [5.0] and merged.cd_events[(0, 1)] == [7.0]
    back = merge_graph(dev, merged, counters_from="delta")
    assert back.cs_events[0] == [5.0]


def test_fragment_hides_old_entries():
    G = Multigraph(2)
    G.sim_at[0, 1] = 5.0
    G.sim_at[1, 0] = 15.0
    F = G.fragment(10.0)
    assert F.sim_at[0, 1] == -np.inf and F.sim_at[1, 0] == 15.0


def test_graph_csv_layout():
    G = Multigraph(2)
    G.sim[0, 1] = 0.5
    G.sim_at[0, 1] = 3.0
    lines = graph_csv(G, "sim").split("\n")
    assert lines[0] == "i,j,value,updated_at"
    assert lines[2] == "0,1,0.5,3.0"
    assert len([x for x in lines if x]) == 5
