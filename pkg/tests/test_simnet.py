import numpy as np
import pytest

from ccsim.metrics import compute_nd
from ccsim.simnet import (DelayTable, Engine, LinkModel, NodeProfile, RngStreams, RoutingError,
                          SimulationError, generate_profiles)


def _link(bws, delay=0.1, connected=None):
    profiles = [NodeProfile(i, bw) for i, bw in enumerate(bws)]
    return LinkModel(profiles, DelayTable.constant(len(bws), delay), connected=connected)


def test_transmit_idle():
    link = _link([50_000.0, 50_000.0])
    assert link.transmit(0, 1, 500, 3.0) == pytest.approx(3.11)


def test_transmit_back_to_back():
    link = _link([50_000.0, 50_000.0])
    a = link.transmit(0, 1, 500, 0.0)
    b = link.transmit(0, 1, 500, 0.0)
    assert b - a == pytest.approx(0.01)


def test_transmit_zero_size():
    link = _link([1e6, 1e6], delay=0.25)
    assert link.transmit(0, 1, 0, 1.0) == 1.25


def test_transmit_needs_connection():
    link = _link([1e6, 1e6], connected=lambda a, b: False)
    with pytest.raises(RoutingError):
        link.transmit(0, 1, 10, 0.0)


def test_probe_nd_examples():
    profiles = [NodeProfile(0, 1e6), NodeProfile(1, 1e6), NodeProfile(2, 500_000.0)]
    m = np.array([[0, 0.2, 0.0], [0.2, 0, 0], [0.0, 0, 0]])
    link = LinkModel(profiles, DelayTable(m))
    assert compute_nd(link.probe_nd(0, 1, 0.0)) == pytest.approx(1 / 1.2)
    assert link.probe_nd(0, 2, 0.0) == pytest.approx(2.0)
    link.transmit(1, 0, 1_000_000, 0.0)  # one second of queued traffic on node 1
    assert link.probe_nd(0, 1, 0.0) == pytest.approx(2.2)


def test_uplink_conservation():
    link = _link([10_000.0, 10_000.0])
    for _ in range(50):
        link.transmit(0, 1, 400, 0.0)
    # 20 kB cannot leave a 10 kB/s uplink in under two seconds
    assert link.busy_until[0] == pytest.approx(2.0)


def test_engine_empty():
    e = Engine()
    assert e.run_until(100.0) == 0


def test_engine_order_and_ties():
    e = Engine()
    out = []
    e.schedule(2.0, "x", out.append, "late")
    e.schedule(1.0, "x", out.append, "a")
    e.schedule(1.0, "x", out.append, "b")
    assert e.run_until(5.0) == 3
    assert out == ["a", "b", "late"]
    assert e.now == 5.0


def test_engine_rejects_past_events():
    e = Engine()
    e.run_until(3.0)
    with pytest.raises(SimulationError):
        e.schedule(1.0, "x", print)


def test_engine_event_accounting():
    e = Engine()
    for t in range(10):
        e.schedule(float(t), "x", lambda: None)
    e.run_until(4.5)
    assert e.scheduled == e.processed + e.pending


def _traced_run():
    e = Engine(trace=True)
    rng = np.random.default_rng(7)

    def tick(k):
        if k < 200:
            e.schedule(e.now + float(rng.exponential()), "tick", tick, k + 1)

    e.schedule(0.0, "tick", tick, 0)
    e.run_until(1e9)
    return e.trace_digest()


def test_engine_trace_is_reproducible():
    assert _traced_run() == _traced_run()


def test_rng_streams_independent():
    a = RngStreams(5)
    b = RngStreams(5, overrides={"exploration": 99})
    assert a.stream("profiles").random() == b.stream("profiles").random()
    assert a.stream("exploration").random() != b.stream("exploration").random()
    assert a.fresh("tests").random() == RngStreams(5).stream("tests").random()


def test_delay_table_symmetric_and_in_range():
    d = DelayTable.generate(30, 0.01, 0.6, np.random.default_rng(1))
    assert np.allclose(d.matrix, d.matrix.T)
    off = d.matrix[~np.eye(30, dtype=bool)]
    assert off.min() >= 0.01 and off.max() <= 0.6


def test_profiles_in_range():
    ps = generate_profiles(100, 50e3, 5e6, np.random.default_rng(3))
    assert all(50e3 <= p.upload_bw <= 5e6 for p in ps)
    assert [p.id for p in ps] == list(range(100))
