import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccsim.dissemination import (HEADER_SIZE, DataPlane, EmptyData, Propagation,
                                 first_missing_from, propagation_metrics, schedule_moment,
                                 split_data, stagger_stride)
from ccsim.simnet import DelayTable, Engine, LinkModel, NodeProfile

from oracles import two_node_t100


def test_split_data():
    assert split_data(1200) == [500, 500, 200]
    assert split_data(500) == [500]
    parts = split_data(1_000_000)
    assert len(parts) == 2000 and set(parts) == {500}
    with pytest.raises(EmptyData):
        split_data(0)


@given(st.integers(1, 200_000))
def test_split_data_sums(n):
    parts = split_data(n)
    assert sum(parts) == n
    assert all(0 < p <= 500 for p in parts)
    assert len(parts) == -(-n // 500)


def test_first_missing_from_wraps():
    assert first_missing_from([0, 2, 5], 3) == 2
    assert first_missing_from([0, 2, 5], 6) == 0
    assert first_missing_from([1], 0) == 0


# the four-peer, three-part staggering example, by peer position
STAGGER_BY_POSITION = {
    0: [0, 1, 2],
    1: [1, 2, 0],
    2: [2, 0, 1],
    3: [0, 1, 2],
}


def test_schedule_moment_table():
    peers = ["p1", "p2", "p3", "p4"]
    have = [set() for _ in peers]
    for m in range(3):
        got = schedule_moment(have, 3, peers, m)
        assert [got[p] for p in peers] == [STAGGER_BY_POSITION[i][m] for i in range(4)]
        for i, p in enumerate(peers):
            have[i].add(got[p])
    assert schedule_moment(have, 3, peers, 3) == {}


def test_schedule_moment_single_peer_in_order():
    have = [set()]
    order = []
    for m in range(5):
        part = schedule_moment(have, 5, ["x"], m)["x"]
        have[0].add(part)
        order.append(part)
    assert order == [0, 1, 2, 3, 4]


def test_schedule_moment_skips_held_parts():
    got = schedule_moment([{0}, set()], 3, ["a", "b"], 0)
    assert got["a"] == 1


def test_stride_spreads_few_peers():
    assert stagger_stride(3, 4) == 1
    assert stagger_stride(20, 4) == 5
    have = [set() for _ in range(4)]
    first = schedule_moment(have, 20, list("abcd"), 0)
    assert sorted(first.values()) == [0, 5, 10, 15]


def _star(n_leaves, bw=50_000.0, delay=0.1):
    n = n_leaves + 1
    profiles = [NodeProfile(i, bw) for i in range(n)]
    adj = {0: set(range(1, n))}
    for i in range(1, n):
        adj[i] = {0}
    engine = Engine()
    link = LinkModel(profiles, DelayTable.constant(n, delay), connected=lambda a, b: b in adj[a])
    return engine, link, adj


def test_origin_send_order_follows_table():
    engine, link, adj = _star(4)
    sent = []
    real = link.transmit

    def spy(sender, receiver, size, now):
        sent.append((sender, receiver, size))
        return real(sender, receiver, size, now)

    link.transmit = spy
    plane = DataPlane(engine, link, adj.__getitem__, 5, audit=True)
    prop = plane.publish(0, 1500, "block")
    plane.drain()
    assert [s for s in sent[:4]] == [(0, p, HEADER_SIZE) for p in (1, 2, 3, 4)]
    # after the header moment the origin cycles peers 1..4 once per moment
    assert [r for _, r, _ in sent[4:]] == [1, 2, 3, 4] * 3
    assert len(prop.complete_at) == 5


def test_two_node_oracle():
    profiles = [NodeProfile(0, 1_000_000.0), NodeProfile(1, 1_000_000.0)]
    engine = Engine()
    link = LinkModel(profiles, DelayTable.constant(2, 0.2))
    plane = DataPlane(engine, link, lambda n: {1 - n}, 2, audit=True)
    prop = plane.publish(0, 1_000_000, "test")
    plane.drain()
    m = propagation_metrics(prop, 2)
    expected = two_node_t100(1_000_000, 1_000_000.0, 0.2)
    assert abs(m.t100 - expected) <= 500 / 1_000_000.0


def test_origin_only_is_incomplete():
    profiles = [NodeProfile(i, 1e6) for i in range(3)]
    engine = Engine()
    link = LinkModel(profiles, DelayTable.constant(3, 0.1))
    plane = DataPlane(engine, link, lambda n: set(), 3)
    prop = plane.publish(0, 1000, "block")
    plane.drain()
    m = propagation_metrics(prop, 3)
    assert not m.complete and m.fraction == pytest.approx(1 / 3)


def _random_overlay(n, edges, bw_seed):
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    profiles = [NodeProfile(i, 20_000.0 + 37_000.0 * ((i * 7 + bw_seed) % 11)) for i in range(n)]
    delays = DelayTable.constant(n, 0.05)
    return adj, profiles, delays


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=5, max_size=30),
       st.integers(1, 6_000), st.integers(1, 3), st.integers(0, 10))
@settings(max_examples=60, deadline=None)
def test_conservation_on_random_overlays(edges, size, chunk, bw_seed):
    adj, profiles, delays = _random_overlay(10, edges, bw_seed)
    engine = Engine()
    link = LinkModel(profiles, delays, connected=lambda a, b: b in adj[a])
    seen = []
    plane = DataPlane(engine, link, adj.__getitem__, 10, audit=True,
                      on_complete=lambda node, prop, rs, now: seen.append((node, rs)))
    prop = plane.publish(0, size, "block", chunk_parts=chunk)
    plane.drain()
    assert plane.inflight == 0 and engine.pending == 0
    for node, rs in seen:
        assert sum(rs.nfhdp.values()) == prop.part_count
        assert -1 not in rs.first_from
        assert node not in rs.nfhdp
    # everyone reachable from the origin completed
    reach, todo = {0}, [0]
    while todo:
        for p in adj[todo.pop()]:
            if p not in reach:
                reach.add(p)
                todo.append(p)
    assert set(prop.complete_at) == reach
    m = propagation_metrics(prop, 10)
    if m.complete:
        assert m.t50 <= m.t90 <= m.t100


def test_propagation_invariants():
    p = Propagation(3, 0, "block", 1234, 0.0)
    assert sum(p.parts) == 1234 and p.part_count == 3
    assert len(p.digest) == 32
    with pytest.raises(ValueError):
        Propagation(1, 0, "bogus", 10, 0.0)


def test_chunked_units_cover_parts():
    p = Propagation(1, 0, "block", 1_000_000, 0.0, chunk_parts=100)
    assert p.unit_count == 20 and sum(p.unit_parts) == 2000 and sum(p.unit_bytes) == 1_000_000


def test_duplicates_counted():
    profiles = [NodeProfile(i, 1e5) for i in range(3)]
    adj = {0: {1, 2}, 1: {0, 2}, 2: {0, 1}}
    engine = Engine()
    link = LinkModel(profiles, DelayTable.constant(3, 0.01))
    plane = DataPlane(engine, link, adj.__getitem__, 3, audit=True)
    prop = plane.publish(0, 5000, "block")
    plane.drain()
    assert len(prop.complete_at) == 3
    assert prop.duplicates >= 0
