"""Chunked dissemination: headers, staggered part scheduling, relay.

A datum is announced by a 34-byte header and shipped as parts of at most
500 bytes. A sender works in *moments*: each moment gives every peer at most
one item (first the header, then one part), and the part handed to the peer
at position ``i`` in data moment ``m`` is the first one it still lacks at or
after ``(i * s + m) mod k``, with stride ``s = ceil(k / peers)``. Different
peers therefore get different parts at the same time and can start relaying
before anyone holds the whole datum. With at least as many peers as parts
the stride is 1; with fewer peers the starting points are spread over the
whole datum so every part has left the sender after about ``k`` sends.

Relay suppression is implicit: a part is never sent to a peer it was
received from or already sent to. The check is repeated when the uplink
actually frees up, so a queued copy is skipped if the peer delivered that
part in the meantime.

For speed the engine can move ``chunk_parts`` consecutive parts as one
scheduling unit; part accounting (first-heard counts) stays in parts.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .simnet import Engine, LinkModel

PART_SIZE = 500
HEADER_SIZE = 34
DIGEST_SIZE = 32
KINDS = ("block", "transaction", "gossip", "test")


class EmptyData(ValueError):
    pass


def split_data(total_size: int, part_size: int = PART_SIZE) -> list:
    if total_size < 1:
        raise EmptyData("cannot propagate zero bytes")
    full, rest = divmod(total_size, part_size)
    return [part_size] * full + ([rest] if rest else [])


def first_missing_from(pending: list, offset: int) -> int:
    """Index into sorted ``pending`` of the first value >= offset, cyclically."""
    i = bisect.bisect_left(pending, offset)
    return 0 if i == len(pending) else i


def stagger_stride(parts: int, peers: int) -> int:
    return max(1, -(-parts // max(1, peers)))


def schedule_moment(sender_state: Sequence[Iterable[int]], parts: int,
                    peers: Sequence, moment: int) -> dict:
    """Part assignment for one data moment (0-indexed) of a sender.

    ``sender_state[i]`` holds the parts peer ``peers[i]`` already has or was
    already sent. Peers lacking nothing get no assignment.
    """
    out = {}
    stride = stagger_stride(parts, len(peers))
    for i, peer in enumerate(peers):
        have = set(sender_state[i])
        missing = [p for p in range(parts) if p not in have]
        if not missing:
            continue
        out[peer] = missing[first_missing_from(missing, (i * stride + moment) % parts)]
    return out


@dataclass
class Propagation:
    id: int
    origin: int
    kind: str
    total_size: int
    started_at: float
    digest: bytes = b""
    chunk_parts: int = 1
    parts: list = field(default_factory=list)
    unit_parts: list = field(default_factory=list)
    unit_bytes: list = field(default_factory=list)
    complete_at: dict = field(default_factory=dict)
    duplicates: int = 0
    header_size: int = HEADER_SIZE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown propagation kind {self.kind!r}")
        if not self.parts:
            self.parts = split_data(self.total_size)
        if not self.digest:
            self.digest = self.id.to_bytes(DIGEST_SIZE, "big")
        if not self.unit_parts:
            c = max(1, int(self.chunk_parts))
            for s in range(0, len(self.parts), c):
                chunk = self.parts[s:s + c]
                self.unit_parts.append(len(chunk))
                self.unit_bytes.append(sum(chunk))

    @property
    def part_count(self) -> int:
        return len(self.parts)

    @property
    def unit_count(self) -> int:
        return len(self.unit_parts)


class ReceiveState:
    __slots__ = ("header_at", "have", "first_from", "nfhdp", "complete_at", "buffered")

    def __init__(self, units: int):
        self.header_at: Optional[float] = None
        self.have: set = set()
        self.first_from: list = [-1] * units
        self.nfhdp: dict = {}
        self.complete_at: Optional[float] = None
        self.buffered: list = []


class OutState:
    """What one node still owes each peer for one propagation."""

    __slots__ = ("order", "index", "active", "hdr_todo", "hdr_known", "pending",
                 "known", "round", "pos", "sent")

    def __init__(self):
        self.order: list = []
        self.index: dict = {}
        self.active: set = set()
        self.hdr_todo: set = set()
        self.hdr_known: set = set()
        self.pending: dict = {}
        self.known: dict = {}
        self.round = 0
        self.pos = 0
        self.sent: Optional[set] = None


@dataclass
class PropagationMetrics:
    t50: Optional[float]
    t90: Optional[float]
    t100: Optional[float]
    fraction: float

    @property
    def complete(self) -> bool:
        return self.t100 is not None


def propagation_metrics(prop: Propagation, node_count: int) -> PropagationMetrics:
    """Time from the first header send until 50/90/100% of nodes hold the data."""
    times = sorted(prop.complete_at.values())
    out = []
    for q in (0.5, 0.9, 1.0):
        need = max(1, math.ceil(q * node_count - 1e-9))
        out.append(times[need - 1] - prop.started_at if len(times) >= need else None)
    return PropagationMetrics(*out, fraction=len(times) / node_count)


class DataPlane:
    """Moves propagations across whatever overlay ``peers_of`` describes.

    ``on_complete(node, prop, recv, now)`` fires once per node that obtains
    every part. ``admit(node, peer, prop, now)`` may veto relaying a given
    propagation to a given peer (used by the baseline); the origin always
    sends to every peer.
    """

    def __init__(self, engine: Engine, link: LinkModel, peers_of: Callable[[int], set],
                 node_count: int, on_complete: Optional[Callable] = None,
                 admit: Optional[Callable] = None, audit: bool = False,
                 buffer_budget: int = 1024):
        self.engine = engine
        self.link = link
        self.peers_of = peers_of
        self.n = node_count
        self.on_complete = on_complete
        self.admit = admit
        self.audit = audit
        self.buffer_budget = buffer_budget
        self.props: dict = {}
        self.out = [dict() for _ in range(node_count)]
        self.recv = [dict() for _ in range(node_count)]
        self.done = [set() for _ in range(node_count)]
        self.rr = [deque() for _ in range(node_count)]
        self.queued = [set() for _ in range(node_count)]
        self.idle = [True] * node_count
        self.inflight = 0
        self.sent_messages = 0
        self.dropped = 0
        self.audited = 0
        self._next_id = 0

    # -- publishing -------------------------------------------------------

    def publish(self, origin: int, size: int, kind: str, chunk_parts: int = 1,
                pid: Optional[int] = None) -> Propagation:
        now = self.engine.now
        if pid is None:
            pid = self._next_id
        self._next_id = max(self._next_id, pid + 1)
        prop = Propagation(pid, origin, kind, size, now, chunk_parts=chunk_parts)
        self.props[pid] = prop
        rs = ReceiveState(prop.unit_count)
        rs.header_at = now
        rs.have = set(range(prop.unit_count))
        rs.complete_at = now
        self.recv[origin][pid] = rs
        prop.complete_at[origin] = now
        st = self._new_out(origin, prop, None, origin_side=True)
        for peer in st.order:
            if peer in st.active:
                self._enqueue_all(origin, prop, st, peer)
        self._activate(origin, pid)
        return prop

    # -- sender side ------------------------------------------------------

    def _new_out(self, node: int, prop: Propagation, src: Optional[int],
                 origin_side: bool = False) -> OutState:
        st = OutState()
        self.out[node][prop.id] = st
        for peer in sorted(self.peers_of(node)):
            self._add_peer(node, prop, st, peer, origin_side, src)
        return st

    def _add_peer(self, node, prop, st, peer, origin_side=False, src=None):
        st.index[peer] = len(st.order)
        st.order.append(peer)
        st.known[peer] = set()
        allowed = origin_side or self.admit is None or self.admit(node, peer, prop, self.engine.now)
        if not allowed or peer == src:
            if peer == src:
                st.hdr_known.add(peer)
                st.active.add(peer)
                st.pending[peer] = []
            return
        st.active.add(peer)
        st.pending[peer] = []
        if peer not in st.hdr_known:
            st.hdr_todo.add(peer)
            self.link.backlog_bytes[node] += prop.header_size

    def _enqueue_all(self, node, prop, st, peer):
        rs = self.recv[node][prop.id]
        known = st.known[peer]
        pend = st.pending[peer]
        ub = prop.unit_bytes
        added = 0
        for u in sorted(rs.have):
            if u not in known:
                pend.append(u)
                added += ub[u]
        pend.sort()
        self.link.backlog_bytes[node] += added

    def _sync_peers(self, node, prop, st):
        current = self.peers_of(node)
        for peer in st.order:
            if peer in st.active and peer not in current:
                self._drop_peer(node, prop, st, peer)
        for peer in sorted(current):
            if peer not in st.index:
                self._add_peer(node, prop, st, peer)
                if peer in st.active:
                    self._enqueue_all(node, prop, st, peer)

    def _drop_peer(self, node, prop, st, peer):
        st.active.discard(peer)
        pend = st.pending.pop(peer, None)
        if pend:
            ub = prop.unit_bytes
            self.link.backlog_bytes[node] -= sum(ub[u] for u in pend)
        if peer in st.hdr_todo:
            st.hdr_todo.discard(peer)
            self.link.backlog_bytes[node] -= prop.header_size

    def _pick(self, node: int, prop: Propagation, st: OutState):
        """Next (peer, unit or None for header) this propagation wants to send."""
        current = self.peers_of(node)
        scanned = 0
        while True:
            if st.pos >= len(st.order):
                st.pos = 0
                st.round += 1
                self._sync_peers(node, prop, st)
            if scanned >= len(st.order):
                return None
            i = st.pos
            peer = st.order[i]
            st.pos += 1
            scanned += 1
            if peer not in st.active:
                continue
            if peer not in current:
                self._drop_peer(node, prop, st, peer)
                continue
            if peer in st.hdr_todo:
                st.hdr_todo.discard(peer)
                st.hdr_known.add(peer)
                self.link.backlog_bytes[node] -= prop.header_size
                return peer, None
            pend = st.pending.get(peer)
            if pend and peer in st.hdr_known:
                moment = st.round - 1 if st.round > 0 else 0
                k = prop.unit_count
                j = first_missing_from(pend, (i * stagger_stride(k, len(st.order)) + moment) % k)
                u = pend.pop(j)
                st.known[peer].add(u)
                self.link.backlog_bytes[node] -= prop.unit_bytes[u]
                return peer, u

    def _activate(self, node: int, pid: int) -> None:
        q = self.queued[node]
        if pid not in q:
            q.add(pid)
            self.rr[node].append(pid)
        if self.idle[node]:
            self._send_next(node)

    def _send_next(self, node: int) -> None:
        rr = self.rr[node]
        outs = self.out[node]
        while rr:
            pid = rr[0]
            st = outs.get(pid)
            prop = self.props[pid]
            choice = None if st is None else self._pick(node, prop, st)
            if choice is None:
                rr.popleft()
                self.queued[node].discard(pid)
                if st is not None:
                    self._maybe_cleanup(node, pid)
                continue
            rr.rotate(-1)
            peer, unit = choice
            size = prop.header_size if unit is None else prop.unit_bytes[unit]
            now = self.engine.now
            arrival = self.link.transmit(node, peer, size, now)
            if self.audit and unit is not None:
                if st.sent is None:
                    st.sent = set()
                if (peer, unit) in st.sent:
                    raise AssertionError(f"{node} sent unit {unit} of {pid} to {peer} twice")
                st.sent.add((peer, unit))
            self.idle[node] = False
            self.sent_messages += 1
            self.inflight += 2
            self.engine.schedule(self.link.busy_until[node], "uplink-free", self._uplink_free, node)
            if unit is None:
                self.engine.schedule(arrival, "message-delivery", self._on_header, peer, pid, node)
            else:
                self.engine.schedule(arrival, "message-delivery", self._on_unit, peer, pid, unit, node)
            return
        self.idle[node] = True

    def _uplink_free(self, node: int) -> None:
        self.inflight -= 1
        self.idle[node] = True
        self._send_next(node)

    def _maybe_cleanup(self, node: int, pid: int) -> None:
        st = self.out[node].get(pid)
        rs = self.recv[node].get(pid)
        if st is None or rs is None or rs.complete_at is None:
            return
        if st.hdr_todo or any(st.pending[p] for p in st.active if p in st.pending):
            return
        del self.out[node][pid]
        del self.recv[node][pid]
        self.done[node].add(pid)

    # -- receiver side ----------------------------------------------------

    def _on_header(self, node: int, pid: int, src: int) -> None:
        self.inflight -= 1
        if pid in self.done[node]:
            return
        prop = self.props[pid]
        rs = self.recv[node].get(pid)
        if rs is None:
            rs = ReceiveState(prop.unit_count)
            self.recv[node][pid] = rs
        st = self.out[node].get(pid)
        if st is not None and src in st.index:
            st.hdr_known.add(src)
            if src in st.hdr_todo:
                st.hdr_todo.discard(src)
                self.link.backlog_bytes[node] -= prop.header_size
        if rs.header_at is not None:
            return
        rs.header_at = self.engine.now
        if st is None:
            st = self._new_out(node, prop, src)
        self._activate(node, pid)
        if rs.buffered:
            pending, rs.buffered = rs.buffered, []
            for unit, frm in pending:
                self._accept_unit(node, prop, rs, st, unit, frm)

    def _on_unit(self, node: int, pid: int, unit: int, src: int) -> None:
        self.inflight -= 1
        prop = self.props[pid]
        if pid in self.done[node]:
            prop.duplicates += 1
            return
        rs = self.recv[node].get(pid)
        if rs is None or rs.header_at is None:
            if rs is None:
                rs = ReceiveState(prop.unit_count)
                self.recv[node][pid] = rs
            if len(rs.buffered) < self.buffer_budget:
                rs.buffered.append((unit, src))
            else:
                self.dropped += 1
            return
        self._accept_unit(node, prop, rs, self.out[node].get(pid), unit, src)

    def _accept_unit(self, node, prop, rs, st, unit, src) -> None:
        if st is None:
            st = self._new_out(node, prop, src)
        known = st.known.get(src)
        if known is not None:
            known.add(unit)
            st.hdr_known.add(src)
            if src in st.hdr_todo:
                st.hdr_todo.discard(src)
                self.link.backlog_bytes[node] -= prop.header_size
            pend = st.pending.get(src)
            if pend:
                j = bisect.bisect_left(pend, unit)
                if j < len(pend) and pend[j] == unit:
                    pend.pop(j)
                    self.link.backlog_bytes[node] -= prop.unit_bytes[unit]
        if unit in rs.have:
            prop.duplicates += 1
            return
        rs.have.add(unit)
        rs.first_from[unit] = src
        rs.nfhdp[src] = rs.nfhdp.get(src, 0) + prop.unit_parts[unit]
        ub = prop.unit_bytes[unit]
        added = 0
        for peer in st.order:
            if peer == src or peer not in st.active:
                continue
            if unit in st.known[peer]:
                continue
            pend = st.pending[peer]
            bisect.insort(pend, unit)
            added += ub
        if added:
            self.link.backlog_bytes[node] += added
            self._activate(node, prop.id)
        if len(rs.have) == prop.unit_count:
            now = self.engine.now
            rs.complete_at = now
            prop.complete_at[node] = now
            if self.audit:
                total = sum(rs.nfhdp.values())
                if total != prop.part_count or -1 in rs.first_from:
                    raise AssertionError(f"part accounting broken at node {node} for {prop.id}")
                self.audited += 1
            if self.on_complete is not None:
                self.on_complete(node, prop, rs, now)
            if not (self.queued[node] and prop.id in self.queued[node]):
                self._maybe_cleanup(node, prop.id)

    # -- bookkeeping ------------------------------------------------------

    @property
    def busy(self) -> bool:
        return self.inflight > 0

    def drain(self) -> int:
        return self.engine.run_while(lambda: self.inflight > 0)
