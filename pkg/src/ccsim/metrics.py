"""Peer-scoring statistics for the contract-connection protocol.

Everything here is a pure function over plain numbers and sets. The
simulator calls these on every completed propagation and on every agent
wakeup, so the hot paths (Grubbs filtering of small windows) are cached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from scipy import stats as _stats

ONE_MB = 1_000_000
HALF_PI = math.pi / 2
THREE_HALVES_PI = 3 * math.pi / 2


class MetricError(ValueError):
    pass


class UndefinedPeerCount(MetricError):
    """A node with no peers has no IPC or FR."""


class InvalidMeasurement(MetricError):
    pass


# --------------------------------------------------------------------------
# data types


@dataclass
class PeerStats:
    peer: int
    sp: float = 0.0
    nd: float = 0.0
    nfhdp_current: int = 0
    nfhdc: int = 0
    exp_nfhdp_current: float = 0.0
    exp_nfhdc: float = 0.0
    first_heard_log: list = field(default_factory=list)

    def record(self, propagation_id, nfhdp: int, exp_nfhdp: float, weight: int = 1) -> None:
        """Fold one finished propagation (or ``weight`` identical ones) in."""
        self.nfhdp_current = nfhdp
        self.exp_nfhdp_current = exp_nfhdp
        self.nfhdc += nfhdp * weight
        self.exp_nfhdc += exp_nfhdp * weight
        self.first_heard_log.append((propagation_id, nfhdp, exp_nfhdp, weight))


@dataclass(frozen=True)
class PropagationEntry:
    """What one node saw of one propagation.

    ``weight`` lets identical single-part propagations (transactions that
    arrived through the same peer) share one entry.
    """

    propagation_id: object
    d1: float
    d2: float
    data_size: int
    nfhdp: tuple = ()
    exp_nfhdp: tuple = ()
    weight: int = 1

    def __post_init__(self):
        if self.d2 < self.d1:
            raise ValueError("d2 precedes d1")
        if self.data_size <= 0:
            raise ValueError("data_size must be positive")

    @property
    def parts(self) -> int:
        return -(-self.data_size // 500)

    def ratio_sum(self) -> float:
        return sum((n + 1) / (e + 1) for n, e in zip(self.nfhdp, self.exp_nfhdp))


@dataclass
class WindowRecord:
    window_start: float
    window_end: float
    entries: list = field(default_factory=list)

    def add(self, entry: PropagationEntry) -> None:
        self.entries.append(entry)

    @property
    def propagation_count(self) -> int:
        return sum(e.weight for e in self.entries)


# --------------------------------------------------------------------------
# structure scores


def compute_ipc(pl_a: Iterable[int], pl_b: Iterable[int], subpl_b: Iterable[int],
                pn_b: Optional[int] = None) -> Fraction:
    """Share of B's two-hop neighbourhood that A cannot already see.

    ``pn_b`` defaults to ``len(pl_b)``.
    """
    if pn_b is None:
        pn_b = len(set(pl_b))
    if pn_b <= 0:
        raise UndefinedPeerCount("IPC is undefined for a node without peers")
    unseen = set(subpl_b).difference(pl_a)
    return Fraction(len(unseen), pn_b)


def ipc_value(pl_a, subpl_b, pn_b: int) -> float:
    """Float form of :func:`compute_ipc` for scans over many candidates."""
    if pn_b <= 0:
        raise UndefinedPeerCount("IPC is undefined for a node without peers")
    return len(subpl_b.difference(pl_a)) / pn_b


def compute_nd(fetch_seconds: float) -> float:
    """Throughput in MB/s of a 1 MB fetch that took ``fetch_seconds``."""
    if not fetch_seconds > 0:
        raise InvalidMeasurement(f"fetch time must be positive, got {fetch_seconds!r}")
    return 1.0 / fetch_seconds


def compute_sp(pn_b: int, ipc: float, nd: float) -> float:
    return pn_b * float(ipc) * (1.0 + nd)


# --------------------------------------------------------------------------
# Grubbs filtering


@lru_cache(maxsize=None)
def grubbs_critical(n: int, p: float = 0.95) -> float:
    """One-sided Grubbs critical value for sample size ``n``.

    Closed form from the Student t quantile at ``alpha / n`` with ``n - 2``
    degrees of freedom, where ``alpha = 1 - p``.
    """
    if n < 3:
        raise MetricError(f"Grubbs critical value needs n >= 3, got {n}")
    alpha = 1.0 - p
    t = float(_stats.t.ppf(1.0 - alpha / n, n - 2))
    return (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))


def _mean_pstdev(xs: Sequence[float], lo: int, hi: int):
    n = hi - lo
    mean = math.fsum(xs[lo:hi]) / n
    var = math.fsum((x - mean) ** 2 for x in xs[lo:hi]) / n
    return mean, math.sqrt(var)


def grubbs_filter(values: Iterable[float], p: float = 0.95) -> list:
    """Drop low outliers, then high outliers, and return the sorted survivors.

    The deviation uses the population standard deviation. Filtering halts
    once fewer than three values remain or the spread collapses to zero.
    """
    xs = sorted(values)
    lo, hi = 0, len(xs)
    while hi - lo >= 3:
        mean, s = _mean_pstdev(xs, lo, hi)
        if s == 0 or abs(mean - xs[lo]) / s < grubbs_critical(hi - lo, p):
            break
        lo += 1
    while hi - lo >= 3:
        mean, s = _mean_pstdev(xs, lo, hi)
        if s == 0 or abs(mean - xs[hi - 1]) / s < grubbs_critical(hi - lo, p):
            break
        hi -= 1
    return xs[lo:hi]


@lru_cache(maxsize=65536)
def _robust_mean(sorted_values: tuple) -> float:
    kept = grubbs_filter(sorted_values)
    return math.fsum(kept) / len(kept)


def compute_exp_nfhdp(stats: Sequence[tuple], t_width: float) -> list:
    """Expected first-heard count per peer from peers of similar SP.

    ``stats`` holds one ``(sp, nfhdp)`` pair per current peer. For each peer
    the counts of every peer whose SP lies within ``t_width`` of its own
    (itself included) are Grubbs-filtered and averaged.
    """
    if t_width < 0:
        raise MetricError("t_width must be non-negative")
    sps = [float(s) for s, _ in stats]
    counts = [n for _, n in stats]
    out = []
    for sp_i in sps:
        window = tuple(sorted(c for sp_j, c in zip(sps, counts) if abs(sp_j - sp_i) <= t_width))
        out.append(_robust_mean(window))
    return out


# --------------------------------------------------------------------------
# contribution scores


def _clamped_sine(x: float) -> float:
    return math.sin(min(THREE_HALVES_PI, x * HALF_PI))


def compute_di(nfhdc: int, exp_nfhdc: float) -> float:
    return _clamped_sine((nfhdc + 1) / (exp_nfhdc + 1))


def fulfil_ratio(window: WindowRecord, pn: int) -> float:
    """The un-sined quantity inside FR (sum of per-peer ratios over PN)."""
    if pn <= 0:
        raise UndefinedPeerCount("FR is undefined for a node without peers")
    return math.fsum(e.weight * e.ratio_sum() for e in window.entries) / pn


def compute_fr(window: WindowRecord, pn: int) -> float:
    return _clamped_sine(fulfil_ratio(window, pn))


def compute_ab(window: WindowRecord, multipart_only: bool = True) -> Optional[float]:
    """Mean download bandwidth (bytes/s) over the window's propagations.

    Returns None when no entry qualifies. Entries with ``d2 == d1`` carry no
    timing and are skipped; with ``multipart_only`` single-part data is
    skipped too, since its header-to-completion span is one serialisation.
    """
    used = [
        e for e in window.entries
        if e.d2 > e.d1 and (not multipart_only or e.parts > 1)
    ]
    if not used:
        return None
    total = math.fsum(e.weight * e.data_size / (e.d2 - e.d1) for e in used)
    return total / sum(e.weight for e in used)
