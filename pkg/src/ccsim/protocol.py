"""A simulated contract-connection network.

Owns one engine, one ledger and one data plane, keeps the per-peer
statistics every node maintains, and wakes each node's agents every ``W``
seconds.

Transactions can travel two ways. ``tx_mode="event"`` pushes them through
the data plane like any other datum. ``tx_mode="analytic"`` computes their
first arrivals as shortest paths over the topology at the start of the
block interval (edge cost = delay + serialisation on the sender's idle
uplink) and books the resulting first-heard counts at the receiver's next
wakeup. Analytic transactions do not load the uplinks.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import agents as ag
from .config import SimConfig
from .dissemination import HEADER_SIZE, DataPlane, Propagation
from .ledger import Contract, Ledger, RestrictionViolation
from .metrics import (PeerStats, PropagationEntry, WindowRecord, compute_exp_nfhdp,
                      compute_nd, compute_sp, ipc_value)
from .simnet import DelayTable, Engine, LinkModel, RngStreams

AGENT_FIELDS = ["node", "window_end", "FR", "PN", "T", "AB_window", "alice_action",
                "alice_outcome", "bob_action", "reward_alice", "reward_bob"]


class TxBatch:
    """Shortest-path arrivals of one interval's transactions."""

    __slots__ = ("arrivals", "sources", "sizes", "latest")

    def __init__(self, arrivals: np.ndarray, sources: np.ndarray, sizes: np.ndarray):
        self.arrivals = arrivals
        self.sources = sources
        self.sizes = sizes
        finite = arrivals[np.isfinite(arrivals)]
        self.latest = float(finite.max()) if finite.size else -math.inf


class ContractNetwork:
    protocol = "contract"

    def __init__(self, cfg: SimConfig, profiles, delays: DelayTable, streams: RngStreams,
                 audit: bool = False, trace: bool = False, agents_enabled: bool = True):
        self.cfg = cfg
        self.n = len(profiles)
        self.profiles = profiles
        self.delays = delays
        self.streams = streams
        self.engine = Engine(trace=trace)
        self.ledger = Ledger(cfg.visibility_delay)
        self.link = LinkModel(profiles, delays, connected=self.ledger.are_peers)
        self.data = DataPlane(self.engine, self.link, self.ledger.peers_of, self.n,
                              on_complete=self._on_complete, audit=audit)
        self.stats = [dict() for _ in range(self.n)]
        self.windows = [WindowRecord(0.0, 0.0) for _ in range(self.n)]
        self.rng_explore = streams.stream("exploration")
        self.rng_accept = streams.stream("acceptance")
        self.agents_enabled = agents_enabled
        self.run_end = cfg.duration_blocks * cfg.block_interval
        w_rng = streams.stream("windows")
        ws = w_rng.integers(cfg.w_min, cfg.w_max + 1, size=self.n)
        rl = cfg.rl
        self.agents = [
            ag.AgentState(int(w), rl.t_initial, rl.t_initial, rl.t_max,
                          ag.QTable(len(ag.ALICE_ACTIONS), rl.alpha, rl.gamma),
                          ag.QTable(len(ag.BOB_ACTIONS), rl.alpha, rl.gamma))
            for w in ws
        ]
        self.agent_rows: list = []
        self.tx_batches: deque = deque()
        self.tx_count = 0
        self.blocks: list = []
        self.di_range = [math.inf, -math.inf]
        self.fr_range = [math.inf, -math.inf]
        self.t_values: set = set()
        self.realized_actions: set = set()
        self.ledger.observers.append(self._on_ledger)

    # -- topology ---------------------------------------------------------

    def _on_ledger(self, ledger: Ledger, kind: str, c: Contract) -> None:
        now = self.engine.now
        if kind == "register":
            for x, y in ((c.a, c.b), (c.b, c.a)):
                nd = compute_nd(self.link.probe_nd(x, y, now, self.cfg.probe_size))
                self.stats[x][y] = PeerStats(y, nd=nd)
            for x, y in ((c.a, c.b), (c.b, c.a)):
                self._refresh_sp(x, y)
        else:
            self.stats[c.a].pop(c.b, None)
            self.stats[c.b].pop(c.a, None)

    def _refresh_sp(self, node: int, peer: int) -> None:
        led = self.ledger
        ps = self.stats[node][peer]
        pn_p = led.pn(peer)
        ipc = ipc_value(led.peers_of(node), led.sub_pl(peer), pn_p) if pn_p else 0.0
        ps.sp = compute_sp(pn_p, ipc, ps.nd)

    def connect(self, a: int, b: int, now: float) -> Contract:
        return self.ledger.register_contract(a, b, now)

    def replace(self, node: int, victim: int, new_peer: int, now: float):
        return self.ledger.replace_contract(node, victim, new_peer, now)

    def bootstrap(self) -> None:
        """Every node opens ``initial_connections`` random rule-respecting contracts."""
        rng = self.streams.stream("topology")
        for a in range(self.n):
            made = 0
            for b in rng.permutation(self.n):
                if made >= self.cfg.initial_connections:
                    break
                b = int(b)
                if b == a or self.ledger.violates_mutual_peer(a, b):
                    continue
                self.ledger.register_contract(a, b, self.engine.now)
                made += 1

    def bob_accepts(self, node: int, inviter: int, now: float) -> bool:
        if not self.agents[node].allow:
            return False
        if self.ledger.violates_mutual_peer(node, inviter):
            return False
        p = ag.accept_probability(self.ledger.last_connected(node, inviter), now,
                                  literal=self.cfg.literal_r_formula)
        if p >= 1.0:
            return True
        return bool(self.rng_accept.random() < p)

    def adjacency(self) -> dict:
        return {n: set(self.ledger.peers_of(n)) for n in range(self.n)}

    # -- data -------------------------------------------------------------

    def publish(self, origin: int, size: int, kind: str = "block") -> Propagation:
        prop = self.data.publish(origin, size, kind, chunk_parts=self.cfg.chunk_parts)
        if kind == "block":
            self.blocks.append(prop)
        return prop

    def _on_complete(self, node: int, prop: Propagation, rs, now: float) -> None:
        peers = sorted(self.ledger.peers_of(node))
        stats = self.stats[node]
        nf = tuple(rs.nfhdp.get(p, 0) for p in peers)
        if peers:
            exp = compute_exp_nfhdp([(stats[p].sp, c) for p, c in zip(peers, nf)],
                                    self.agents[node].t_param)
            for p, c, e in zip(peers, nf, exp):
                stats[p].record(prop.id, c, e)
        else:
            exp = []
        d1 = rs.header_at if rs.header_at is not None else now
        self.windows[node].add(PropagationEntry(prop.id, d1, now, prop.total_size, nf, tuple(exp)))

    def schedule_transactions(self, txs: list, start: float) -> None:
        """Queue one interval's transactions, given as (offset, origin, size)."""
        if not txs or self.cfg.tx_mode == "off":
            return
        self.tx_count += len(txs)
        if self.cfg.tx_mode == "event":
            for offset, origin, size in txs:
                self.engine.schedule(start + offset, "tx-publish", self.publish,
                                     origin, size, "transaction")
            return
        offsets = np.array([t[0] for t in txs], dtype=float)
        origins = np.array([t[1] for t in txs], dtype=np.int64)
        sizes = np.array([t[2] for t in txs], dtype=np.int64)
        dist, pred = self._shortest_paths(origins, float(sizes.mean()))
        arrivals = dist + (start + offsets)[:, None]
        arrivals[np.arange(len(txs)), origins] = np.inf
        self.tx_batches.append(TxBatch(arrivals, pred, sizes))

    def _shortest_paths(self, origins: np.ndarray, size: float):
        rows, cols, w = [], [], []
        bw = self.link.bw
        for a in range(self.n):
            cost = (HEADER_SIZE + size) / bw[a]
            for b in self.ledger.peers_of(a):
                rows.append(a)
                cols.append(b)
                w.append(self.delays.get(a, b) + cost)
        graph = csr_matrix((w, (rows, cols)), shape=(self.n, self.n))
        uniq, inverse = np.unique(origins, return_inverse=True)
        dist, pred = dijkstra(graph, directed=True, indices=uniq, return_predecessors=True)
        return dist[inverse], pred[inverse]

    def _book_transactions(self, node: int, since: float, now: float) -> None:
        peers = sorted(self.ledger.peers_of(node))
        if not self.tx_batches or not peers:
            return
        counts: dict = {}
        size_sum = 0
        for batch in self.tx_batches:
            col = batch.arrivals[:, node]
            mask = (col > since) & (col <= now)
            if not mask.any():
                continue
            srcs = batch.sources[mask, node]
            size_sum += int(batch.sizes[mask].sum())
            vals, cnt = np.unique(srcs, return_counts=True)
            for v, c in zip(vals.tolist(), cnt.tolist()):
                counts[v] = counts.get(v, 0) + c
        if not counts:
            return
        stats = self.stats[node]
        sps = [stats[p].sp for p in peers]
        t = self.agents[node].t_param
        total = sum(counts.values())
        mean_size = max(1, round(size_sum / total))
        window = self.windows[node]
        for idx, p in enumerate(peers):
            c = counts.get(p)
            if not c:
                continue
            onehot = tuple(1 if j == idx else 0 for j in range(len(peers)))
            exp = compute_exp_nfhdp(list(zip(sps, onehot)), t)
            for q, n1, e in zip(peers, onehot, exp):
                stats[q].record(None, n1, e, weight=c)
            window.add(PropagationEntry(None, now, now, mean_size, onehot, tuple(exp), weight=c))

    def _prune_tx(self) -> None:
        oldest_wake = min(a.last_wake for a in self.agents)
        while self.tx_batches and self.tx_batches[0].latest <= oldest_wake:
            self.tx_batches.popleft()

    # -- agents -----------------------------------------------------------

    def epsilon(self, now: float) -> float:
        rl = self.cfg.rl
        frac = min(1.0, now / self.run_end) if self.run_end > 0 else 1.0
        return rl.epsilon + (rl.epsilon_final - rl.epsilon) * frac

    def note_di(self, di: float) -> None:
        lo, hi = self.di_range
        self.di_range = [min(lo, di), max(hi, di)]

    def start_agents(self) -> None:
        for node, a in enumerate(self.agents):
            self.engine.schedule(float(a.window_w), "agent-wakeup", self._wake, node)

    def _wake(self, node: int) -> None:
        now = self.engine.now
        a = self.agents[node]
        self.engine.schedule(now + a.window_w, "agent-wakeup", self._wake, node)
        if not self.agents_enabled:
            return
        self._book_transactions(node, a.last_wake, now)
        for p in self.ledger.peers_of(node):
            self._refresh_sp(node, p)
        a.windows += 1
        obs = ag.observe(self, node, now)
        self.fr_range = [min(self.fr_range[0], obs.fr), max(self.fr_range[1], obs.fr)]
        alice = ag.alice_step(self, node, now, obs)
        bob = ag.bob_step(self, node, now, obs)
        self.t_values.add(a.t_param)
        self.realized_actions.add(alice["action"])
        self.agent_rows.append({
            "node": node,
            "window_end": repr(now),
            "FR": repr(obs.fr),
            "PN": obs.pn,
            "T": repr(a.t_param),
            "AB_window": "" if obs.ab is None else repr(obs.ab),
            "alice_action": ag.action_label(alice["action"]),
            "alice_outcome": alice["outcome"],
            "bob_action": ag.BOB_ACTIONS[bob["action"]],
            "reward_alice": "" if alice["reward"] is None else repr(alice["reward"]),
            "reward_bob": "" if bob["reward"] is None else repr(bob["reward"]),
        })
        a.last_wake = now
        self.windows[node] = WindowRecord(now, now + a.window_w)
        for ps in self.stats[node].values():
            ps.first_heard_log.clear()
        if self.tx_batches and node == 0:
            self._prune_tx()
