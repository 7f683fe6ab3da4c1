import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccsim.metrics import (InvalidMeasurement, MetricError, PeerStats, PropagationEntry,
                           UndefinedPeerCount, WindowRecord, compute_ab, compute_di,
                           compute_exp_nfhdp, compute_fr, compute_ipc, compute_nd,
                           compute_sp, grubbs_critical, grubbs_filter, ipc_value)

from fixtures import two_cluster_ledger
from oracles import PUBLISHED_GRUBBS_5PCT, grubbs_steps


def test_ipc_on_two_cluster_fixture():
    led, ids = two_cluster_ledger()
    a, b = ids["A"], ids["B"]
    assert compute_ipc(led.peers_of(a), led.peers_of(b), led.sub_pl(b)) == Fraction(1)
    assert compute_ipc(led.peers_of(b), led.peers_of(a), led.sub_pl(a)) == Fraction(5, 4)


def test_ipc_zero_when_neighbourhood_already_seen():
    assert compute_ipc({1, 2, 3}, {9}, {1, 2}) == 0


def test_ipc_without_peers_is_undefined():
    with pytest.raises(UndefinedPeerCount):
        compute_ipc({1}, set(), {1}, pn_b=0)
    with pytest.raises(UndefinedPeerCount):
        ipc_value({1}, frozenset(), 0)


def test_ipc_value_matches_fraction():
    assert ipc_value({1, 2}, frozenset({2, 3, 4, 5}), 4) == float(Fraction(3, 4))


@pytest.mark.parametrize("secs,nd", [(2.0, 0.5), (1.0, 1.0), (0.1, 10.0)])
def test_nd(secs, nd):
    assert compute_nd(secs) == pytest.approx(nd, rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_nd_rejects_non_positive(bad):
    with pytest.raises(InvalidMeasurement):
        compute_nd(bad)


def test_sp_examples():
    assert compute_sp(4, 1, 0.5) == 6.0
    assert compute_sp(4, 1.25, 1.0) == 10.0
    assert compute_sp(7, 0, 3.3) == 0.0


@given(st.integers(0, 50), st.floats(0, 5), st.floats(0, 10))
def test_sp_linear_in_pn(pn, ipc, nd):
    assert compute_sp(2 * pn, ipc, nd) == pytest.approx(2 * compute_sp(pn, ipc, nd))


# -- Grubbs ----------------------------------------------------------------


def test_grubbs_critical_known_values():
    assert grubbs_critical(3) == pytest.approx(1.15312, abs=1e-5)
    assert grubbs_critical(5) == pytest.approx(1.67139, abs=1e-5)
    assert grubbs_critical(10) > grubbs_critical(3)


def test_grubbs_critical_against_published_table():
    for n, g in PUBLISHED_GRUBBS_5PCT.items():
        assert grubbs_critical(n) == pytest.approx(g, abs=1e-3), n


def test_grubbs_critical_is_increasing():
    vals = [grubbs_critical(n) for n in range(3, 60)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_grubbs_critical_domain():
    with pytest.raises(MetricError):
        grubbs_critical(2)


def test_grubbs_small_sets_untouched():
    assert grubbs_filter([]) == []
    assert grubbs_filter([7, 5]) == [5, 7]


def test_grubbs_drops_high_outlier():
    assert grubbs_filter([8, 9, 10, 11, 50]) == [8, 9, 10, 11]


def test_grubbs_identical_values_kept():
    assert grubbs_filter([4, 4, 4, 4]) == [4, 4, 4, 4]


def test_grubbs_three_spread_values_lose_the_low_one():
    # with the divide-by-n deviation a spread-out triple always loses one extreme
    assert grubbs_filter([4, 6, 8]) == [6, 8]


multisets = st.lists(st.one_of(st.integers(0, 30), st.floats(-100, 100, allow_nan=False)),
                     max_size=20)


@given(multisets)
def test_grubbs_matches_stepwise_oracle(xs):
    assert grubbs_filter(xs) == grubbs_steps(xs)


@given(multisets)
def test_grubbs_output_is_submultiset(xs):
    out = list(grubbs_filter(xs))
    pool = list(xs)
    for v in out:
        pool.remove(v)


@given(st.lists(st.integers(0, 15), max_size=20))
@settings(max_examples=200)
def test_grubbs_keeps_at_least_two_when_input_has_two(xs):
    out = grubbs_filter(xs)
    assert len(out) >= min(2, len(xs))


# -- expectations and scores ------------------------------------------------


def test_exp_nfhdp_single_peer():
    assert compute_exp_nfhdp([(35.0, 7)], 5) == [7.0]


def test_exp_nfhdp_common_window_after_filter():
    # 4 is rejected as a low outlier, so everyone expects mean(6, 8)
    assert compute_exp_nfhdp([(10, 4), (11, 6), (12, 8)], 5) == [7.0, 7.0, 7.0]


def test_exp_nfhdp_zero_width_is_identity():
    assert compute_exp_nfhdp([(1, 3), (2, 9), (3, 0)], 0) == [3.0, 9.0, 0.0]


def test_exp_nfhdp_wide_window_without_rejection_is_global_mean():
    data = [(1, 5), (20, 5), (40, 6), (60, 6)]
    assert compute_exp_nfhdp(data, 1000) == [5.5] * 4


def test_exp_nfhdp_equal_sp_both_count():
    assert compute_exp_nfhdp([(3, 2), (3, 4)], 0) == [3.0, 3.0]


def test_exp_nfhdp_negative_width_rejected():
    with pytest.raises(MetricError):
        compute_exp_nfhdp([(1, 1)], -1)


def test_di_examples():
    assert compute_di(0, 0) == 1.0
    assert compute_di(5, 1) == pytest.approx(-1.0, abs=1e-15)
    assert compute_di(0, 3) == pytest.approx(0.38268343236, abs=1e-10)


@given(st.integers(0, 10_000), st.floats(0, 10_000))
def test_di_bounded(n, e):
    assert -1.0 <= compute_di(n, e) <= 1.0


@given(st.integers(0, 1000))
def test_di_equal_counts_is_one(x):
    assert compute_di(x, float(x)) == 1.0


def _window(*entries):
    w = WindowRecord(0.0, 60.0)
    for e in entries:
        w.add(e)
    return w


def test_fr_examples():
    w = _window(PropagationEntry(1, 0.0, 1.0, 1000, (3,), (3.0,)))
    assert compute_fr(w, 1) == 1.0
    w = _window(PropagationEntry(1, 0.0, 1.0, 1000, (3, 0), (3.0, 1.0)))
    assert compute_fr(w, 2) == pytest.approx(0.92387953251, abs=1e-10)
    w = _window(PropagationEntry(1, 0.0, 1.0, 1000, (8,), (1.0,)))
    assert compute_fr(w, 1) == pytest.approx(-1.0, abs=1e-15)


def test_fr_weighted_entry_counts_as_repeats():
    e = PropagationEntry(None, 0.0, 0.0, 300, (1, 0), (0.5, 0.5))
    single = _window(e, e)
    weighted = _window(PropagationEntry(None, 0.0, 0.0, 300, (1, 0), (0.5, 0.5), weight=2))
    assert compute_fr(single, 2) == compute_fr(weighted, 2)


def test_fr_without_peers_is_undefined():
    with pytest.raises(UndefinedPeerCount):
        compute_fr(_window(), 0)


def test_ab_examples():
    assert compute_ab(_window(PropagationEntry(1, 0.0, 2.0, 1_000_000))) == 500_000.0
    w = _window(PropagationEntry(1, 0.0, 2.0, 1_000_000), PropagationEntry(2, 5.0, 7.0, 3_000_000))
    assert compute_ab(w) == 1_000_000.0
    assert compute_ab(_window()) is None


def test_ab_skips_zero_span_and_single_part():
    w = _window(PropagationEntry(1, 3.0, 3.0, 1_000_000), PropagationEntry(2, 0.0, 0.001, 300))
    assert compute_ab(w) is None
    assert compute_ab(w, multipart_only=False) == pytest.approx(300_000.0)


def test_entry_validation():
    with pytest.raises(ValueError):
        PropagationEntry(1, 2.0, 1.0, 10)
    with pytest.raises(ValueError):
        PropagationEntry(1, 0.0, 1.0, 0)
    assert PropagationEntry(1, 0, 1, 1_000_000).parts == 2000


def test_peer_stats_accumulate():
    ps = PeerStats(3)
    assert ps.nfhdc == 0 and ps.exp_nfhdc == 0
    ps.record(1, 4, 2.5)
    ps.record(2, 1, 0.5, weight=3)
    assert ps.nfhdc == 7
    assert ps.exp_nfhdc == pytest.approx(4.0)
    assert ps.nfhdp_current == 1
    assert len(ps.first_heard_log) == 2
