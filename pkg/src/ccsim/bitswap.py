"""Baseline overlay: DNS bootstrap every interval, probabilistic relay.

Each node asks a directory for 3-5 random nodes every block interval and
connects to them. Connections are never closed on purpose, but a node keeps
at most ``baseline_max_peers`` and evicts its oldest one to make room. When
a node starts relaying a datum to a peer it does so with probability
``min(1, exp(3r - 6))``, ``r`` being the connection's age in tens of
seconds; a publisher always sends to every peer.
"""

from __future__ import annotations

import math

import numpy as np

from .config import SimConfig
from .dissemination import DataPlane, Propagation
from .simnet import DelayTable, Engine, LinkModel, RngStreams


class DnsDirectory:
    def __init__(self, nodes, rng: np.random.Generator, lo: int = 3, hi: int = 5):
        self.nodes = list(nodes)
        self.rng = rng
        self.lo, self.hi = lo, hi

    def dns_lookup(self, inquirer: int) -> list:
        others = [n for n in self.nodes if n != inquirer]
        if len(others) <= self.lo:
            return others
        k = int(self.rng.integers(self.lo, self.hi + 1))
        k = min(k, len(others))
        picks = self.rng.choice(len(others), size=k, replace=False)
        return [others[i] for i in picks]


def send_probability(connected_at: float, now: float) -> float:
    x = 3.0 * (now - connected_at) / 10.0 - 6.0
    return 1.0 if x >= 0 else math.exp(x)


class BitswapNetwork:
    protocol = "bitswap"

    def __init__(self, cfg: SimConfig, profiles, delays: DelayTable, streams: RngStreams,
                 audit: bool = False, trace: bool = False):
        self.cfg = cfg
        self.n = len(profiles)
        self.profiles = profiles
        self.delays = delays
        self.engine = Engine(trace=trace)
        self.conns = [dict() for _ in range(self.n)]
        self.link = LinkModel(profiles, delays, connected=lambda a, b: b in self.conns[a])
        self.dns = DnsDirectory(range(self.n), streams.stream("dns"), cfg.dns_min, cfg.dns_max)
        self.rng_forward = streams.stream("forward")
        self.data = DataPlane(self.engine, self.link, self.conns.__getitem__, self.n,
                              admit=self.baseline_forward, audit=audit)
        self.blocks: list = []
        self.connections_made = 0

    def _connect(self, a: int, b: int, now: float) -> bool:
        if a == b or b in self.conns[a]:
            return False
        cap = self.cfg.baseline_max_peers
        for x in (a, b):
            if cap and len(self.conns[x]) >= cap:
                oldest = next(iter(self.conns[x]))
                del self.conns[x][oldest]
                del self.conns[oldest][x]
        self.conns[a][b] = now
        self.conns[b][a] = now
        self.connections_made += 1
        return True

    def bitswap_tick(self, node: int, now: float) -> list:
        made = []
        for other in self.dns.dns_lookup(node):
            if self._connect(node, other, now):
                made.append(other)
        return made

    def tick_all(self, now: float) -> None:
        for node in range(self.n):
            self.bitswap_tick(node, now)

    def baseline_forward(self, node: int, peer: int, prop: Propagation, now: float) -> bool:
        since = self.conns[node].get(peer, now)
        p = send_probability(since, now)
        if p >= 1.0:
            return True
        return bool(self.rng_forward.random() < p)

    def adjacency(self) -> dict:
        return {n: set(self.conns[n]) for n in range(self.n)}

    def connection_times(self) -> dict:
        return {n: dict(self.conns[n]) for n in range(self.n)}

    def publish(self, origin: int, size: int, kind: str = "block") -> Propagation:
        prop = self.data.publish(origin, size, kind, chunk_parts=self.cfg.chunk_parts)
        if kind == "block":
            self.blocks.append(prop)
        return prop

    def schedule_transactions(self, txs: list, start: float) -> None:
        if not self.cfg.baseline_traffic or self.cfg.tx_mode == "off":
            return
        for offset, origin, size in txs:
            self.engine.schedule(start + offset, "tx-publish", self.publish,
                                 origin, size, "transaction")
