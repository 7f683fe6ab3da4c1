"""Per-node Q-learning controllers.

Alice decides how a node reshapes its peer set once per window; Bob decides
whether the node takes invitations during the next window. Both are tabular
learners over a discretised (FR, PN) state.

The functions that act on a live network (``alice_step``, ``bob_step``,
``choose_add_candidate``) expect the network object from
:mod:`ccsim.protocol`; they only touch its ledger, link model, per-peer
statistics and RNG streams.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .ledger import RestrictionViolation
from .metrics import (UndefinedPeerCount, compute_ab, compute_di, compute_fr,
                      compute_nd, compute_sp, ipc_value)

BASE_ACTIONS = ("Add", "Replace1", "Replace2", "STAY")
T_ADJUST = (0.0, 0.25, -0.25)
ALICE_ACTIONS = tuple((b, d) for b in BASE_ACTIONS for d in T_ADJUST)
BOB_ACTIONS = ("Allow", "NotAllow")

# lower edges of the peer-count bins: 0, 1, 2, 3, 4-5, 6-8, 9-15, 16+
PN_BIN_EDGES = (0, 1, 2, 3, 4, 6, 9, 16)


def action_label(index: int) -> str:
    base, d = ALICE_ACTIONS[index]
    if d > 0:
        return f"{base}+ChangeT1"
    if d < 0:
        return f"{base}+ChangeT2"
    return base


def fr_bin(fr: float, bins: int = 8) -> int:
    b = int((fr + 1.0) / 2.0 * bins)
    return min(bins - 1, max(0, b))


def pn_bin(pn: int, edges: Sequence[int] = PN_BIN_EDGES) -> int:
    return bisect.bisect_right(edges, pn) - 1


# --------------------------------------------------------------------------
# tabular learner


@dataclass
class QTable:
    n_actions: int
    alpha: float = 0.1
    gamma: float = 0.9
    values: dict = field(default_factory=dict)
    errors: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    def get(self, s, a: int) -> float:
        return self.values.get((s, a), 0.0)

    def best_value(self, s) -> float:
        return max(self.get(s, a) for a in range(self.n_actions))

    def greedy(self, s) -> int:
        """Highest-valued action; ties go to the lowest action index."""
        best, best_v = 0, self.get(s, 0)
        for a in range(1, self.n_actions):
            v = self.get(s, a)
            if v > best_v:
                best, best_v = a, v
        return best

    def choose(self, s, epsilon: float, rng) -> int:
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return self.greedy(s)


def q_update(table: QTable, s, a: int, reward: float, s_next) -> QTable:
    """One-step Q-learning backup; a non-finite reward is counted and skipped."""
    if not math.isfinite(reward):
        table.errors += 1
        return table
    old = table.get(s, a)
    target = reward + table.gamma * table.best_value(s_next)
    table.values[(s, a)] = old + table.alpha * (target - old)
    return table


def accept_probability(last_connect_time: Optional[float], now: float,
                       literal: bool = False) -> float:
    """Chance that a node accepts an invitation, given when the pair last connected.

    ``r`` is the time since the last connection in tens of seconds (0 for a
    pair that never connected counts from time 0). ``literal`` flips the
    sign of ``r`` to the printed ``(LT - C) / 10`` form.
    """
    lt = 0.0 if last_connect_time is None else last_connect_time
    r = (lt - now) / 10.0 if literal else (now - lt) / 10.0
    x = 3.0 * r - 6.0
    if x >= 0:
        return 1.0
    return math.exp(x)


# --------------------------------------------------------------------------
# per-node controller state


@dataclass
class AgentState:
    window_w: int
    t_param: float
    t_initial: float
    t_max: float
    alice: QTable
    bob: QTable
    allow: bool = True
    windows: int = 0
    last_wake: float = 0.0
    alice_prev: Optional[tuple] = None
    bob_prev: Optional[tuple] = None
    ab_prev: Optional[float] = None
    rj_prev: Optional[int] = None

    def adjust_t(self, delta: float) -> None:
        self.t_param = min(self.t_max, max(0.0, self.t_param + delta))


@dataclass
class WindowObservation:
    fr: float
    pn: int
    ab: Optional[float]
    state: tuple


def observe(net, node: int, now: float) -> WindowObservation:
    ag = net.agents[node]
    pn = net.ledger.pn(node)
    window = net.windows[node]
    try:
        fr = compute_fr(window, pn)
    except UndefinedPeerCount:
        fr = 0.0
    ab = compute_ab(window)
    if ab is None:
        ab = ag.ab_prev
    state = (fr_bin(fr, net.cfg.rl.fr_bins), pn_bin(pn, net.cfg.rl.pn_bins))
    return WindowObservation(fr, pn, ab, state)


# --------------------------------------------------------------------------
# peer selection


def candidate_sp(net, node: int, cand: int, pl_a, now: float) -> float:
    led = net.ledger
    pn_c = led.pn(cand)
    if pn_c == 0:
        return 0.0
    ipc = ipc_value(pl_a, led.sub_pl(cand), pn_c)
    nd = compute_nd(net.link.probe_nd(node, cand, now, net.cfg.probe_size))
    return compute_sp(pn_c, ipc, nd)


def choose_add_candidate(net, node: int, now: float, victim: Optional[int] = None) -> Optional[int]:
    """Highest-SP willing node that ``node`` may peer with.

    With ``victim`` set the scan assumes that peer is already dropped.
    Ties break towards the lower node id.
    """
    led = net.ledger
    mine = led.peers_of(node)
    pl_a = mine - {victim} if victim is not None else mine
    cap = net.cfg.max_peers
    scored = []
    for cand in range(net.n):
        if cand == node or cand in mine:
            continue
        peers_c = led.peers_of(cand)
        if cap and len(peers_c) >= cap:
            continue
        if not peers_c.isdisjoint(pl_a):
            continue
        scored.append((-candidate_sp(net, node, cand, pl_a, now), cand))
    scored.sort()
    for _, cand in scored:
        if net.bob_accepts(cand, node, now):
            return cand
    return None


def pick_victim_di(net, node: int) -> Optional[int]:
    stats = net.stats[node]
    best = None
    for p in sorted(net.ledger.peers_of(node)):
        ps = stats[p]
        di = compute_di(ps.nfhdc, ps.exp_nfhdc)
        net.note_di(di)
        if best is None or di < best[0]:
            best = (di, p)
    return None if best is None else best[1]


def pick_victim_ipc(net, node: int) -> Optional[int]:
    led = net.ledger
    mine = led.peers_of(node)
    best = None
    for p in sorted(mine):
        ipc = ipc_value(mine, led.sub_pl(p), led.pn(p))
        if best is None or ipc > best[0]:
            best = (ipc, p)
    return None if best is None else best[1]


# --------------------------------------------------------------------------
# the two controllers


def execute_base(net, node: int, base: str, now: float) -> str:
    """Carry out a structural action; returns what actually happened."""
    led = net.ledger
    if base == "STAY":
        return "STAY"
    if base == "Add":
        if net.cfg.max_peers and led.pn(node) >= net.cfg.max_peers:
            return "Add:full"
        cand = choose_add_candidate(net, node, now)
        if cand is None:
            return "Add:none"
        net.connect(node, cand, now)
        return "Add"
    if led.pn(node) == 0:
        return f"{base}:nopeers"
    victim = pick_victim_di(net, node) if base == "Replace1" else pick_victim_ipc(net, node)
    cand = choose_add_candidate(net, node, now, victim=victim)
    if cand is None:
        return f"{base}:none"
    try:
        net.replace(node, victim, cand, now)
    except RestrictionViolation:
        return f"{base}:none"
    return base


def alice_step(net, node: int, now: float, obs: WindowObservation) -> dict:
    ag = net.agents[node]
    reward = None
    if ag.windows > 2 and ag.alice_prev is not None and obs.ab is not None and ag.ab_prev is not None:
        reward = obs.ab - ag.ab_prev
        s_prev, a_prev = ag.alice_prev
        q_update(ag.alice, s_prev, a_prev, reward, obs.state)
    a = ag.alice.choose(obs.state, net.epsilon(now), net.rng_explore)
    base, dt = ALICE_ACTIONS[a]
    outcome = execute_base(net, node, base, now)
    if dt:
        ag.adjust_t(dt)
    ag.alice_prev = (obs.state, a)
    if obs.ab is not None:
        ag.ab_prev = obs.ab
    return {"action": a, "outcome": outcome, "reward": reward}


def bob_step(net, node: int, now: float, obs: WindowObservation) -> dict:
    ag = net.agents[node]
    rj = net.ledger.rejections(node, now - ag.window_w, now)
    reward = None
    if ag.windows > 2 and ag.bob_prev is not None and ag.rj_prev is not None:
        reward = -float(rj - ag.rj_prev)
        s_prev, a_prev = ag.bob_prev
        q_update(ag.bob, s_prev, a_prev, reward, obs.state)
    a = ag.bob.choose(obs.state, net.epsilon(now), net.rng_explore)
    ag.allow = BOB_ACTIONS[a] == "Allow"
    ag.bob_prev = (obs.state, a)
    ag.rj_prev = rj
    return {"action": a, "reward": reward}
