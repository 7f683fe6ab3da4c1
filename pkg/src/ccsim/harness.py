"""Experiment orchestration for mirrored contract-connection vs baseline runs.

Both networks are built from the same seed: identical node bandwidths,
identical pairwise delays, identical workload and identical test
publishers. Broadcast tests run on a frozen copy of the overlay at the test
time, so the measurement sees an idle network and does not perturb the
running one.
"""

from __future__ import annotations

import csv
import io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bitswap import BitswapNetwork, send_probability
from .config import ConfigError, SimConfig
from .dissemination import DataPlane, propagation_metrics
from .ledger import Ledger
from .protocol import AGENT_FIELDS, ContractNetwork
from .simnet import DelayTable, Engine, LinkModel, RngStreams, generate_profiles

PROTOCOLS = ("contract", "bitswap")

PROPAGATION_FIELDS = ["protocol", "kind", "index", "origin", "started_at", "size",
                      "t50", "t90", "t100", "fraction", "duplicates"]
TEST_FIELDS = ["protocol", "test", "publisher", "time", "t50", "t90", "t100", "fraction"]
SUMMARY_FIELDS = ["protocol", "tests", "complete", "mean_t100", "std_t100",
                  "min_t100", "max_t100", "degenerate"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class ExperimentPlan:
    cfg: SimConfig
    protocols: tuple = PROTOCOLS
    out_dir: Optional[Path] = None

    def __post_init__(self):
        self.cfg.validate()
        bad = set(self.protocols) - set(PROTOCOLS)
        if bad:
            raise ConfigError(f"unknown protocols {sorted(bad)}")

    @property
    def seed(self) -> int:
        return self.cfg.seed

    @property
    def interval(self) -> float:
        return self.cfg.block_interval

    def streams(self) -> RngStreams:
        overrides = {}
        if self.cfg.exploration_seed is not None:
            overrides["exploration"] = self.cfg.exploration_seed
        return RngStreams(self.cfg.seed, overrides)

    def test_slots(self) -> list:
        cfg = self.cfg
        start = cfg.warmup_blocks * cfg.block_interval
        span = (cfg.duration_blocks - cfg.warmup_blocks) * cfg.block_interval
        k = cfg.test_broadcasts
        return [start + j * span / k for j in range(k)]


@dataclass
class Workload:
    producers: list
    transactions: list  # per interval: list of (offset, origin, size)
    publishers: list


def build_environment(plan: ExperimentPlan):
    cfg = plan.cfg
    streams = plan.streams()
    profiles = generate_profiles(cfg.node_count, cfg.bw_min, cfg.bw_max, streams.stream("profiles"))
    delays = DelayTable.generate(cfg.node_count, cfg.delay_min, cfg.delay_max, streams.stream("delays"))
    return profiles, delays


def make_network(plan: ExperimentPlan, protocol: str, profiles, delays, audit: bool = False,
                 trace: bool = False, observers=()):
    streams = plan.streams()
    if protocol == "contract":
        net = ContractNetwork(plan.cfg, profiles, delays, streams, audit=audit, trace=trace)
        net.ledger.observers.extend(observers)
        net.bootstrap()
        return net
    return BitswapNetwork(plan.cfg, profiles, delays, streams, audit=audit, trace=trace)


def build_mirror_networks(plan: ExperimentPlan, audit: bool = False):
    profiles, delays = build_environment(plan)
    return (make_network(plan, "contract", profiles, delays, audit),
            make_network(plan, "bitswap", profiles, delays, audit))


def generate_workload(plan: ExperimentPlan) -> Workload:
    cfg = plan.cfg
    streams = plan.streams()
    rng = streams.stream("workload")
    n = cfg.node_count
    lo, hi = cfg.tx_per_interval
    smin, smax = cfg.tx_size
    producers, txs = [], []
    for _ in range(cfg.duration_blocks):
        producers.append(int(rng.integers(n)))
        counts = rng.integers(lo, hi + 1, size=n)
        total = int(counts.sum())
        origins = [node for node in range(n) for _ in range(int(counts[node]))]
        offsets = rng.uniform(0.0, cfg.block_interval, size=total)
        sizes = rng.integers(smin, smax + 1, size=total)
        batch = sorted(zip(offsets.tolist(), origins, sizes.tolist()))
        txs.append(batch)
    publishers = streams.stream("tests").integers(n, size=cfg.test_broadcasts).tolist()
    return Workload(producers, txs, publishers)


def isolated_broadcast(adjacency: dict, profiles, delays: DelayTable, publisher: int,
                       size: int, start: float, chunk_parts: int = 1, admit=None,
                       audit: bool = False):
    """Broadcast ``size`` bytes over a frozen overlay with idle uplinks."""
    n = len(profiles)
    engine = Engine()
    engine.now = float(start)
    adj = {node: set(adjacency.get(node, ())) for node in range(n)}
    link = LinkModel(profiles, delays, connected=lambda a, b: b in adj[a])
    plane = DataPlane(engine, link, adj.__getitem__, n, admit=admit, audit=audit)
    prop = plane.publish(publisher, size, "test", chunk_parts=chunk_parts)
    plane.drain()
    return prop, propagation_metrics(prop, n)


@dataclass
class NetworkResult:
    protocol: str
    tests: list = field(default_factory=list)
    propagations: list = field(default_factory=list)
    agents: list = field(default_factory=list)
    contracts_csv: str = ""
    mutations: int = 0
    violations: int = 0
    triangle_checks: int = 0
    triangles_seen: int = 0
    di_range: tuple = ()
    fr_range: tuple = ()
    t_values: tuple = ()
    realized_actions: tuple = ()
    audited_completions: int = 0
    trace_digest: str = ""


class InvariantMonitor:
    """Checks the mutual-peer rule over the whole active graph after every mutation."""

    def __init__(self):
        self.checks = 0
        self.triangles = 0
        self.violations = 0

    def __call__(self, ledger: Ledger, kind: str, contract) -> None:
        self.checks += 1
        found = ledger.triangles()
        self.triangles += len(found)
        if kind == "register" and ledger.peers_of(contract.a) & ledger.peers_of(contract.b):
            self.violations += 1


def _test_admit(net: BitswapNetwork, times: dict, now: float):
    rng = net.rng_forward

    def admit(node, peer, prop, _t):
        p = send_probability(times[node].get(peer, now), now)
        return p >= 1.0 or bool(rng.random() < p)

    return admit


def run_protocol(plan: ExperimentPlan, protocol: str, workload: Workload = None,
                 audit: bool = False, monitor: bool = False, trace: bool = False) -> NetworkResult:
    """Run one network through the whole workload and its broadcast tests."""
    cfg = plan.cfg
    profiles, delays = build_environment(plan)
    if workload is None:
        workload = generate_workload(plan)
    mon = InvariantMonitor() if monitor and protocol == "contract" else None
    net = make_network(plan, protocol, profiles, delays, audit=audit, trace=trace,
                       observers=[mon] if mon else ())
    res = NetworkResult(protocol)
    if protocol == "contract":
        net.start_agents()
    slots = plan.test_slots()
    si = 0
    interval = cfg.block_interval

    def run_tests_until(t_limit):
        nonlocal si
        while si < len(slots) and slots[si] < t_limit:
            t = slots[si]
            net.engine.run_until(t)
            adj = net.adjacency()
            admit = None
            if protocol == "bitswap":
                admit = _test_admit(net, net.connection_times(), t)
            pub = workload.publishers[si]
            prop, m = isolated_broadcast(adj, profiles, delays, pub, cfg.test_size, t,
                                      cfg.chunk_parts, admit=admit, audit=audit)
            if audit:
                res.audited_completions += len(prop.complete_at) - 1
            res.tests.append({"protocol": protocol, "test": si, "publisher": pub, "time": t,
                              "t50": m.t50, "t90": m.t90, "t100": m.t100,
                              "fraction": m.fraction, "duplicates": prop.duplicates})
            si += 1

    for k in range(cfg.duration_blocks):
        t = k * interval
        run_tests_until(t)
        net.engine.run_until(t)
        if protocol == "bitswap":
            net.tick_all(t)
        if protocol == "contract" or cfg.baseline_traffic:
            net.publish(workload.producers[k], cfg.block_size, "block")
        net.schedule_transactions(workload.transactions[k], t)
        run_tests_until(t + interval)
    net.engine.run_until(cfg.duration_blocks * interval)
    net.data.drain()
    res.audited_completions += net.data.audited

    for idx, prop in enumerate(net.blocks):
        m = propagation_metrics(prop, net.n)
        res.propagations.append({"protocol": protocol, "kind": "block", "index": idx,
                                 "origin": prop.origin, "started_at": prop.started_at,
                                 "size": prop.total_size, "t50": m.t50, "t90": m.t90,
                                 "t100": m.t100, "fraction": m.fraction,
                                 "duplicates": prop.duplicates})
    for row in res.tests:
        res.propagations.append({"protocol": protocol, "kind": "test", "index": row["test"],
                                 "origin": row["publisher"], "started_at": row["time"],
                                 "size": cfg.test_size, "t50": row["t50"], "t90": row["t90"],
                                 "t100": row["t100"], "fraction": row["fraction"],
                                 "duplicates": row["duplicates"]})
    if protocol == "contract":
        res.agents = net.agent_rows
        res.contracts_csv = net.ledger.to_csv()
        res.mutations = net.ledger.mutations
        res.di_range = tuple(net.di_range)
        res.fr_range = tuple(net.fr_range)
        res.t_values = tuple(sorted(net.t_values))
        res.realized_actions = tuple(sorted(net.realized_actions))
        if mon is not None:
            res.violations = mon.violations
            res.triangle_checks = mon.checks
            res.triangles_seen = mon.triangles
    if trace:
        res.trace_digest = net.engine.trace_digest()
    return res


def _run_worker(args):
    cfg, protocol = args
    plan = ExperimentPlan(cfg, (protocol,))
    return run_protocol(plan, protocol)


def run_experiment(plan: ExperimentPlan, parallel: bool = False, monitor: bool = False) -> dict:
    workload = generate_workload(plan)
    if parallel and len(plan.protocols) > 1:
        with ProcessPoolExecutor(max_workers=len(plan.protocols)) as pool:
            results = list(pool.map(_run_worker, [(plan.cfg, p) for p in plan.protocols]))
        return dict(zip(plan.protocols, results))
    return {p: run_protocol(plan, p, workload, monitor=monitor) for p in plan.protocols}


# --------------------------------------------------------------------------
# statistics and output


def summarize(tests: list) -> dict:
    t100 = [r["t100"] for r in tests if r["t100"] is not None]
    out = {"tests": len(tests), "complete": len(t100), "degenerate": not t100}
    if t100:
        out.update(mean_t100=statistics.fmean(t100), std_t100=statistics.pstdev(t100),
                   min_t100=min(t100), max_t100=max(t100))
    else:
        out.update(mean_t100=None, std_t100=None, min_t100=None, max_t100=None)
    return out


def _csv(rows: list, fields: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    return buf.getvalue()


def figure7(results: dict) -> str:
    """Per-interval block full-propagation time, one column per protocol."""
    protos = list(results)
    series = {p: [r for r in results[p].propagations if r["kind"] == "block"] for p in protos}
    length = max((len(s) for s in series.values()), default=0)
    lines = ["# interval " + " ".join(f"{p}_t100" for p in protos)]
    for i in range(length):
        cells = []
        for p in protos:
            s = series[p]
            v = s[i]["t100"] if i < len(s) else None
            cells.append("nan" if v is None else repr(v))
        lines.append(f"{i} " + " ".join(cells))
    return "\n".join(lines) + "\n"


def figure8(results: dict) -> str:
    protos = list(results)
    length = max((len(results[p].tests) for p in protos), default=0)
    lines = ["# test " + " ".join(f"{p}_t100" for p in protos)]
    for i in range(length):
        cells = []
        for p in protos:
            rows = results[p].tests
            v = rows[i]["t100"] if i < len(rows) else None
            cells.append("nan" if v is None else repr(v))
        lines.append(f"{i} " + " ".join(cells))
    return "\n".join(lines) + "\n"


def write_outputs(out_dir, plan: ExperimentPlan, results: dict) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profiles, _ = build_environment(plan)
    files = {}
    files["profiles.csv"] = _csv([{"node": p.id, "upload_bw": p.upload_bw} for p in profiles],
                                 ["node", "upload_bw"])
    contract = results.get("contract")
    files["contracts.csv"] = contract.contracts_csv if contract else _csv([], ["id"])
    files["propagations.csv"] = _csv([r for res in results.values() for r in res.propagations],
                                     PROPAGATION_FIELDS)
    files["agents.csv"] = _csv(contract.agents if contract else [], AGENT_FIELDS)
    files["tests.csv"] = _csv([r for res in results.values() for r in res.tests], TEST_FIELDS)
    summary_rows = []
    for p, res in results.items():
        row = summarize(res.tests)
        row["protocol"] = p
        summary_rows.append(row)
    files["summary.csv"] = _csv(summary_rows, SUMMARY_FIELDS)
    files["figure7.dat"] = figure7(results)
    files["figure8.dat"] = figure8(results)
    for name, text in files.items():
        (out / name).write_text(text)
    return files


def read_tests(path) -> dict:
    """Load tests.csv back into per-protocol rows (t100 as float or None)."""
    by: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            t100 = float(r["t100"]) if r["t100"] else None
            by.setdefault(r["protocol"], []).append({"publisher": int(r["publisher"]), "t100": t100})
    return by


def relative_stability(summary: dict) -> Optional[float]:
    """1 - std_contract / std_bitswap; how much steadier the contract network is."""
    c, b = summary.get("contract"), summary.get("bitswap")
    if not c or not b or c["std_t100"] is None or b["std_t100"] in (None, 0):
        return None
    return 1.0 - c["std_t100"] / b["std_t100"]
