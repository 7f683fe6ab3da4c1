"""Discrete-event engine, link model and seeded randomness.

Links follow a store-and-forward model: each node owns one FIFO uplink of
fixed bandwidth, a message occupies it for ``size / bandwidth`` seconds and
then takes the pair's fixed propagation delay to arrive. Downloads are not
constrained.
"""

from __future__ import annotations

import hashlib
import heapq
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .metrics import ONE_MB


class SimulationError(RuntimeError):
    pass


class RoutingError(SimulationError):
    pass


# --------------------------------------------------------------------------
# randomness

STREAMS = {
    "profiles": 1,
    "delays": 2,
    "topology": 3,
    "workload": 4,
    "tests": 5,
    "exploration": 6,
    "acceptance": 7,
    "windows": 8,
    "dns": 9,
    "forward": 10,
}


class RngStreams:
    """One independent generator per concern, all derived from one seed.

    ``overrides`` maps a stream name to a seed used instead of the master
    seed for that stream alone.
    """

    def __init__(self, seed: int, overrides: Optional[dict] = None):
        self.seed = int(seed)
        self.overrides = dict(overrides or {})
        self._cache: dict = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            entropy = self.overrides.get(name, self.seed)
            ss = np.random.SeedSequence(entropy=int(entropy), spawn_key=(STREAMS[name],))
            self._cache[name] = np.random.Generator(np.random.PCG64(ss))
        return self._cache[name]

    def fresh(self, name: str) -> np.random.Generator:
        """A new generator for ``name`` starting from the beginning of its stream."""
        entropy = self.overrides.get(name, self.seed)
        ss = np.random.SeedSequence(entropy=int(entropy), spawn_key=(STREAMS[name],))
        return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# node capacities


@dataclass(frozen=True)
class NodeProfile:
    id: int
    upload_bw: float


class DelayTable:
    """Symmetric per-pair one-way delays, fixed for the whole run."""

    def __init__(self, matrix: np.ndarray):
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError("delay matrix must be square")
        self.n = matrix.shape[0]
        self.matrix = matrix
        self._rows = matrix.tolist() if self.n <= 1000 else None

    @classmethod
    def generate(cls, n: int, lo: float, hi: float, rng: np.random.Generator) -> "DelayTable":
        m = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        m[iu] = rng.uniform(lo, hi, size=len(iu[0]))
        m = m + m.T
        return cls(m)

    @classmethod
    def constant(cls, n: int, value: float) -> "DelayTable":
        m = np.full((n, n), float(value))
        np.fill_diagonal(m, 0.0)
        return cls(m)

    def get(self, a: int, b: int) -> float:
        if self._rows is not None:
            return self._rows[a][b]
        return float(self.matrix[a, b])


def generate_profiles(n: int, bw_min: float, bw_max: float,
                      rng: np.random.Generator) -> list:
    bws = rng.uniform(bw_min, bw_max, size=n)
    return [NodeProfile(i, float(bw)) for i, bw in enumerate(bws)]


class LinkModel:
    """Per-sender FIFO uplinks plus the pairwise delay table."""

    def __init__(self, profiles: Sequence[NodeProfile], delays: DelayTable,
                 connected: Optional[Callable[[int, int], bool]] = None):
        self.bw = [p.upload_bw for p in profiles]
        self.delays = delays
        self.busy_until = [0.0] * len(self.bw)
        self.backlog_bytes = [0] * len(self.bw)
        self.bytes_sent = [0] * len(self.bw)
        self.connected = connected

    def transmit(self, sender: int, receiver: int, size: int, now: float) -> float:
        """Queue ``size`` bytes on the sender's uplink; return the arrival time."""
        if self.connected is not None and not self.connected(sender, receiver):
            raise RoutingError(f"no connection {sender} -> {receiver}")
        start = self.busy_until[sender]
        if start < now:
            start = now
        done = start + size / self.bw[sender]
        self.busy_until[sender] = done
        self.bytes_sent[sender] += size
        return done + self.delays.get(sender, receiver)

    def queue_delay(self, node: int, now: float) -> float:
        """Seconds before a new message from ``node`` would start leaving."""
        busy = self.busy_until[node] - now
        if busy < 0:
            busy = 0.0
        return busy + self.backlog_bytes[node] / self.bw[node]

    def probe_nd(self, a: int, b: int, now: float, probe_size: int = 10_000) -> float:
        """1 MB-equivalent fetch time for ``a`` pulling from ``b``.

        The probe's serialisation on b's uplink is extrapolated to 1 MB;
        the delay and b's current queue are paid once.
        """
        per_byte = (probe_size / self.bw[b]) / probe_size
        return self.delays.get(a, b) + self.queue_delay(b, now) + per_byte * ONE_MB


# --------------------------------------------------------------------------
# event loop


class Engine:
    """Time-ordered event queue with insertion-order tie-breaking."""

    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.processed = 0
        self._hash = hashlib.blake2b(digest_size=16) if trace else None

    def schedule(self, time: float, kind: str, fn: Callable, *args) -> None:
        if time < self.now:
            raise SimulationError(f"event at {time} scheduled in the past (now={self.now})")
        heapq.heappush(self._heap, (time, self._seq, kind, fn, args))
        self._seq += 1

    @property
    def scheduled(self) -> int:
        return self._seq

    @property
    def pending(self) -> int:
        return len(self._heap)

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        if not self._heap:
            return False
        time, seq, kind, fn, args = heapq.heappop(self._heap)
        if time < self.now:
            raise SimulationError("event queue went backwards")
        self.now = time
        self.processed += 1
        if self._hash is not None:
            self._hash.update(struct.pack("<dq", time, seq))
            self._hash.update(kind.encode())
        fn(*args)
        return True

    def run_until(self, t_end: float) -> int:
        """Apply every event with time <= t_end, then park the clock at t_end."""
        heap = self._heap
        pop = heapq.heappop
        h = self._hash
        count = 0
        while heap and heap[0][0] <= t_end:
            time, seq, kind, fn, args = pop(heap)
            self.now = time
            if h is not None:
                h.update(struct.pack("<dq", time, seq))
                h.update(kind.encode())
            fn(*args)
            count += 1
        self.processed += count
        if t_end > self.now:
            self.now = t_end
        return count

    def run_while(self, busy: Callable[[], bool]) -> int:
        """Apply events in order for as long as ``busy()`` holds."""
        count = 0
        while self._heap and busy():
            self.step()
            count += 1
        return count

    def trace_digest(self) -> str:
        if self._hash is None:
            raise SimulationError("engine was created without tracing")
        return self._hash.hexdigest()
