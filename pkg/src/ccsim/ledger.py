"""Connection contracts and the shared registry that stores them.

The registry stands in for "publishing the contract to the chain": every
node sees the same append-only contract log, and the active peer relation is
derived from it. Peering is only allowed between nodes with no common peer,
which keeps the active graph triangle-free at all times.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Optional


class LedgerError(Exception):
    pass


class SelfConnectionError(LedgerError):
    pass


class RestrictionViolation(LedgerError):
    """The two nodes share a peer (or are already peers)."""


class StaleTermination(LedgerError):
    pass


class NotAParty(LedgerError):
    pass


def endpoint_for(node: int) -> tuple:
    return (f"10.{(node >> 16) & 255}.{(node >> 8) & 255}.{node & 255}", 30303)


@dataclass
class Contract:
    id: int
    a: int
    b: int
    endpoint_a: tuple
    endpoint_b: tuple
    created_at: float
    terminated_at: Optional[float] = None
    terminated_by: Optional[int] = None

    @property
    def active(self) -> bool:
        return self.terminated_at is None

    def other(self, node: int) -> int:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        raise NotAParty(f"node {node} is not a party to contract {self.id}")

    def as_row(self) -> dict:
        return {
            "id": self.id,
            "a": self.a,
            "b": self.b,
            "created_at": repr(self.created_at),
            "terminated_at": "" if self.terminated_at is None else repr(self.terminated_at),
            "terminated_by": "" if self.terminated_by is None else self.terminated_by,
        }


CONTRACT_FIELDS = ["id", "a", "b", "created_at", "terminated_at", "terminated_by"]


def _pair(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


class Ledger:
    def __init__(self, visibility_delay: float = 0.0):
        self.contracts: list[Contract] = []
        self.visibility_delay = visibility_delay
        self._peers: dict[int, set] = {}
        self._active: dict[tuple, int] = {}
        self._last_connected: dict[tuple, float] = {}
        self._rejected: dict[int, list] = {}
        self._subpl: dict[int, frozenset] = {}
        self.mutations = 0
        self.observers: list[Callable[["Ledger", str, Contract], None]] = []

    # -- queries ----------------------------------------------------------

    def peers_of(self, n: int) -> set:
        """Active peers of ``n``. The returned set is live; do not mutate it."""
        return self._peers.get(n, _EMPTY)

    def pn(self, n: int) -> int:
        return len(self._peers.get(n, _EMPTY))

    def sub_pl(self, n: int) -> frozenset:
        """Union of the peer lists of n's peers, without n itself."""
        cached = self._subpl.get(n)
        if cached is None:
            acc = set()
            for p in self.peers_of(n):
                acc |= self.peers_of(p)
            acc.discard(n)
            cached = frozenset(acc)
            self._subpl[n] = cached
        return cached

    def are_peers(self, a: int, b: int) -> bool:
        return _pair(a, b) in self._active

    def contract_between(self, a: int, b: int) -> Optional[Contract]:
        cid = self._active.get(_pair(a, b))
        return None if cid is None else self.contracts[cid]

    def violates_mutual_peer(self, a: int, b: int, ignoring: Iterable[int] = ()) -> bool:
        """True if a and b are already peers or share a peer.

        ``ignoring`` lists peers of ``a`` to pretend are gone, for checking a
        replacement before the old contract is terminated.
        """
        if a == b:
            raise SelfConnectionError(f"node {a} cannot peer with itself")
        if self.are_peers(a, b):
            return True
        pa, pb = self.peers_of(a), self.peers_of(b)
        if len(pb) < len(pa):
            common = pb & pa
        else:
            common = pa & pb
        if not common:
            return False
        ignoring = set(ignoring)
        if not ignoring:
            return True
        return not common <= ignoring

    def last_connected(self, a: int, b: int) -> Optional[float]:
        return self._last_connected.get(_pair(a, b))

    def rejections(self, n: int, start: float, end: float) -> int:
        """Contracts of ``n`` terminated by the other side within (start, end]."""
        return sum(1 for t in self._rejected.get(n, ()) if start < t <= end)

    def rejection_total(self, n: int) -> int:
        return len(self._rejected.get(n, ()))

    def active_contracts(self) -> list:
        return [self.contracts[cid] for cid in sorted(self._active.values())]

    def visible_peers_of(self, n: int, now: float) -> set:
        """Peers of ``n`` as an outside observer sees them at ``now``."""
        if self.visibility_delay <= 0:
            return self.peers_of(n)
        cutoff = now - self.visibility_delay
        seen = set()
        for c in self.contracts:
            if n not in (c.a, c.b) or c.created_at > cutoff:
                continue
            if c.terminated_at is not None and c.terminated_at <= cutoff:
                continue
            seen.add(c.other(n))
        return seen

    # -- mutations --------------------------------------------------------

    def register_contract(self, a: int, b: int, now: float) -> Contract:
        if self.violates_mutual_peer(a, b):
            raise RestrictionViolation(f"{a} and {b} cannot peer")
        return self._append(a, b, now)

    def terminate_contract(self, contract_id: int, by: int, now: float) -> Optional[Contract]:
        """Terminate an active contract. A repeated termination is a no-op."""
        if not 0 <= contract_id < len(self.contracts):
            raise StaleTermination(f"unknown contract {contract_id}")
        c = self.contracts[contract_id]
        other = c.other(by)
        if not c.active:
            return None
        if now < c.created_at:
            raise LedgerError("termination precedes creation")
        c.terminated_at = now
        c.terminated_by = by
        del self._active[_pair(c.a, c.b)]
        self._peers[c.a].discard(c.b)
        self._peers[c.b].discard(c.a)
        self._rejected.setdefault(other, []).append(now)
        self._invalidate(c.a, c.b)
        self._mutated("terminate", c)
        return c

    def replace_contract(self, node: int, victim: int, new_peer: int, now: float) -> tuple:
        """Drop ``victim`` and peer with ``new_peer`` at the same instant.

        The rule is checked as if the victim were already gone; nothing is
        applied when it fails.
        """
        old = self.contract_between(node, victim)
        if old is None:
            raise StaleTermination(f"{node} and {victim} are not peers")
        if new_peer == victim or self.violates_mutual_peer(node, new_peer, ignoring=(victim,)):
            raise RestrictionViolation(f"{node} cannot replace {victim} with {new_peer}")
        self.terminate_contract(old.id, node, now)
        return old, self._append(node, new_peer, now)

    def _append(self, a: int, b: int, now: float) -> Contract:
        c = Contract(len(self.contracts), a, b, endpoint_for(a), endpoint_for(b), now)
        self.contracts.append(c)
        self._active[_pair(a, b)] = c.id
        self._peers.setdefault(a, set()).add(b)
        self._peers.setdefault(b, set()).add(a)
        self._last_connected[_pair(a, b)] = now
        self._invalidate(a, b)
        self._mutated("register", c)
        return c

    def _invalidate(self, a: int, b: int) -> None:
        # sub_pl(x) changes when an edge touches x or one of x's peers
        sub = self._subpl
        for n in (a, b):
            sub.pop(n, None)
            for p in self._peers.get(n, _EMPTY):
                sub.pop(p, None)

    def _mutated(self, kind: str, c: Contract) -> None:
        self.mutations += 1
        for fn in self.observers:
            fn(self, kind, c)

    # -- checks and export ----------------------------------------------

    def triangles(self) -> list:
        """Every triangle in the active graph (there should never be one)."""
        found = []
        for (a, b) in self._active:
            for c in self._peers[a] & self._peers[b]:
                if c > b:
                    found.append((a, b, c))
        return found

    def active_index(self) -> dict:
        return {n: set(ps) for n, ps in self._peers.items() if ps}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CONTRACT_FIELDS, lineterminator="\n")
        w.writeheader()
        for c in self.contracts:
            w.writerow(c.as_row())
        return buf.getvalue()

    @classmethod
    def replay(cls, rows: Iterable[dict], check: bool = True) -> "Ledger":
        """Rebuild a ledger by re-applying the contract log in time order.

        The log does not record the order of events sharing a timestamp, so
        each such group is applied terminations-first and anything that
        cannot apply yet is retried until the group settles.
        """
        events = []
        for r in rows:
            cid, a, b = int(r["id"]), int(r["a"]), int(r["b"])
            events.append((float(r["created_at"]), 1, cid, a, b, None))
            if r.get("terminated_at") not in (None, ""):
                events.append((float(r["terminated_at"]), 0, cid, a, b, int(r["terminated_by"])))
        events.sort(key=lambda e: (e[0], e[1], e[2]))
        led = cls()
        ids: dict = {}
        i = 0
        while i < len(events):
            j = i
            while j < len(events) and events[j][0] == events[i][0]:
                j += 1
            pending = events[i:j]
            while pending:
                deferred = []
                for ev in pending:
                    t, kind, cid, a, b, by = ev
                    if kind == 0:
                        if cid not in ids:
                            deferred.append(ev)
                            continue
                        led.terminate_contract(ids[cid], by, t)
                    elif check and led.violates_mutual_peer(a, b):
                        deferred.append(ev)
                    else:
                        ids[cid] = led._append(a, b, t).id
                if len(deferred) == len(pending):
                    raise RestrictionViolation(f"contract log is inconsistent at t={pending[0][0]}")
                pending = deferred
            i = j
        return led


_EMPTY: frozenset = frozenset()
