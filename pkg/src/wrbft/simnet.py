"""Deterministic discrete-event network simulator.

Virtual time is integer microseconds.  Every node owns one CPU and one uplink:

* a delivered message is handled at ``max(arrival, cpu_free)`` and occupies the
  CPU for the processing cost its handler charged;
* outbound copies leave one after another over the sender's uplink
  (``size / bandwidth`` each) and then take a propagation delay drawn from the
  SNR-aware :class:`DelayModel`.  Small control frames (votes, heartbeats)
  have their own strict-priority queue so they never wait behind block data.

Events pop in ``(deliver_at, sequence_number)`` order, so a run is a pure
function of (topology, seed, fault plan, workload).
"""
from __future__ import annotations

import heapq
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .messages import Message

SILENT = "silent"
EQUIVOCATE = "equivocate"
BAD_SIGNATURE = "bad_signature"
REPLAY_OLD_VIEW = "replay_old_view"
BYZANTINE_BEHAVIORS = (SILENT, EQUIVOCATE, BAD_SIGNATURE, REPLAY_OLD_VIEW)

_MSG = 0
_TIMER = 1


@dataclass
class DelayModel:
    """Propagation delay = base (intra/inter region) +/- jitter + SNR penalty."""

    intra_base_us: int = 5_000
    inter_base_us: int = 15_000
    jitter: float = 0.2
    snr_penalty_max_us: int = 10_000  # added at 0 dB
    snr_full_db: float = 30.0  # no penalty at or above this SNR
    bandwidth_bytes_per_us: float = 12.5  # 100 Mbit/s uplink
    control_bytes: int = 512  # frames this small use the strict-priority control queue
    region: dict[int, int] = field(default_factory=dict)
    snr: dict[tuple[int, int], float] = field(default_factory=dict)

    def snr_penalty(self, snr_db: float) -> int:
        clipped = min(self.snr_full_db, max(0.0, snr_db))
        return round(self.snr_penalty_max_us * (self.snr_full_db - clipped) / self.snr_full_db)

    def base(self, a: int, b: int) -> int:
        same = self.region.get(a, -1) == self.region.get(b, -2)
        return self.intra_base_us if same else self.inter_base_us

    def propagation(self, a: int, b: int, rng: random.Random) -> int:
        base = self.base(a, b)
        spread = int(base * self.jitter)
        delay = base + (rng.randint(-spread, spread) if spread else 0)
        delay += self.snr_penalty(self.snr.get((a, b), self.snr_full_db))
        return max(1, delay)

    def transmission(self, size: int) -> int:
        return max(1, round(size / self.bandwidth_bytes_per_us))


@dataclass
class CostModel:
    """CPU time (microseconds) charged by handlers for the work they do.

    Defaults are single-core timings of the BLS12-381 backend, rounded.
    """

    handle: int = 20
    sign: int = 450
    verify: int = 2_900
    aggregate_per_signer: int = 700
    verify_aggregate: int = 3_200
    vrf_prove: int = 3_000
    vrf_verify: int = 3_400
    hash_per_kb: float = 1.0


@dataclass
class FaultPlan:
    crashed: dict[int, int] = field(default_factory=dict)  # node -> crash time (us)
    byzantine: dict[int, str] = field(default_factory=dict)  # node -> behavior
    activation: dict[int, int] = field(default_factory=dict)  # node -> byzantine from (us)

    def __post_init__(self):
        both = set(self.crashed) & set(self.byzantine)
        if both:
            raise ValueError(f"nodes {sorted(both)} are both crashed and byzantine")
        for node, behavior in self.byzantine.items():
            if behavior not in BYZANTINE_BEHAVIORS:
                raise ValueError(f"node {node}: unknown byzantine behavior {behavior!r}")

    def is_crashed(self, node: int, t: int) -> bool:
        at = self.crashed.get(node)
        return at is not None and t >= at

    def behavior(self, node: int, t: int) -> str | None:
        b = self.byzantine.get(node)
        if b is None or t < self.activation.get(node, 0):
            return None
        return b

    def faulty(self) -> set[int]:
        return set(self.crashed) | set(self.byzantine)


@dataclass
class CounterSet:
    messages_sent: Counter = field(default_factory=Counter)
    hash_invocations: Counter = field(default_factory=Counter)
    bytes_sent: Counter = field(default_factory=Counter)
    by_kind: Counter = field(default_factory=Counter)
    invalid_dropped: Counter = field(default_factory=Counter)
    send_attempts: int = 0
    suppressed: int = 0

    @property
    def total_messages(self) -> int:
        return sum(self.messages_sent.values())

    @property
    def total_hashes(self) -> int:
        return sum(self.hash_invocations.values())


@dataclass(frozen=True)
class CommitRecord:
    node: int
    height: int
    block_hash: bytes
    view: int
    time: int
    proposal_time: int
    tx_count: int
    signers: tuple[int, ...] = ()


@dataclass
class MetricsSnapshot:
    counters: CounterSet
    commits: list[CommitRecord]
    end_time: int
    reason: str  # "stopped" | "time_cap" | "idle"
    n_nodes: int

    def commit_latencies(self, first_only: bool = True) -> dict[int, int]:
        """height -> (commit - proposal) for the earliest commit of each height."""
        out: dict[int, int] = {}
        for rec in sorted(self.commits, key=lambda r: (r.height, r.time)):
            if rec.proposal_time < 0:
                continue  # replica-side commit: the proposal time is not known there
            if rec.height not in out or not first_only:
                out.setdefault(rec.height, rec.time - rec.proposal_time)
        return out


def energy_proxy(counters: CounterSet, c_msg: float, c_hash: float, n_nodes: int | None = None) -> tuple[float, float]:
    """(system, mean per node) energy from message forwardings and hash invocations."""
    if c_msg < 0 or c_hash < 0:
        raise ValueError("energy costs must be non-negative")
    system = c_msg * counters.total_messages + c_hash * counters.total_hashes
    n = n_nodes or max(1, len(set(counters.messages_sent) | set(counters.hash_invocations)))
    return system, system / n


class Port:
    """A node's handle on the network for the duration of one handler call."""

    __slots__ = ("node_id", "sim", "now", "cost", "out", "timers")

    def __init__(self, node_id: int, sim: Simulator):
        self.node_id = node_id
        self.sim = sim
        self.now = 0
        self.cost = 0
        self.out: list[tuple[tuple[int, ...], Message]] = []
        self.timers: list[tuple[int, str, Any]] = []

    def send(self, to: int, msg: Message) -> None:
        self.out.append(((to,), msg))

    def broadcast(self, recipients: Iterable[int], msg: Message) -> None:
        rs = tuple(r for r in recipients if r != self.node_id)
        if rs:
            self.out.append((rs, msg))

    def set_timer(self, at: int, name: str, data: Any = None) -> None:
        self.timers.append((at, name, data))

    def charge(self, us: float) -> None:
        self.cost += us

    def count_hashes(self, n: int = 1) -> None:
        self.sim.counters.hash_invocations[self.node_id] += n

    def count_invalid(self) -> None:
        self.sim.counters.invalid_dropped[self.node_id] += 1

    def commit(self, height: int, block_hash: bytes, view: int, proposal_time: int, tx_count: int, signers=()) -> None:
        self.sim.record_commit(
            CommitRecord(self.node_id, height, block_hash, view, self.now + int(self.cost), proposal_time, tx_count, tuple(signers))
        )

    def log(self, event: str, **fields) -> None:
        self.sim.log(event, self.node_id, self.now, **fields)


class Simulator:
    def __init__(
        self,
        delay_model: DelayModel,
        costs: CostModel | None = None,
        fault_plan: FaultPlan | None = None,
        seed: int = 0,
        record_trace: bool = True,
        tamper: Callable | None = None,
    ):
        self.delay = delay_model
        self.costs = costs or CostModel()
        self.faults = fault_plan or FaultPlan()
        self.rng = random.Random(f"simnet:{seed}")
        self.record_trace = record_trace
        self.tamper = tamper  # (sender, recipients, msg, now) -> list[(recipient, msg)]
        self.processes: dict[int, Any] = {}
        self.queue: list = []
        self._seq = 0
        self.cpu_free: dict[int, int] = defaultdict(int)
        self.link_free: dict[tuple[int, bool], int] = defaultdict(int)
        self.clock = 0
        self.counters = CounterSet()
        self.trace: list[tuple] = []
        self.commits: list[CommitRecord] = []
        self.events_processed = 0
        self._commit_hooks: list[Callable[[CommitRecord], None]] = []

    # -- setup -------------------------------------------------------------

    def add(self, node_id: int, process) -> None:
        self.processes[node_id] = process

    def on_commit(self, hook: Callable[[CommitRecord], None]) -> None:
        self._commit_hooks.append(hook)

    def start(self) -> None:
        for node_id in sorted(self.processes):
            if self.faults.is_crashed(node_id, 0):
                continue
            self._invoke(node_id, 0, lambda proc: proc.start())

    # -- scheduling --------------------------------------------------------

    def _push(self, at: int, node: int, kind: int, payload) -> None:
        heapq.heappush(self.queue, (at, self._seq, node, kind, payload))
        self._seq += 1

    def submit(self, sender: int, recipients: Sequence[int], msg: Message, now: int) -> list[tuple[int, int]]:
        """Schedule copies of ``msg``; returns [(recipient, deliver_at)]."""
        self.counters.send_attempts += len(recipients)
        if self.faults.is_crashed(sender, now):
            self.counters.suppressed += len(recipients)
            self.log("suppressed", sender, now, kind=msg.kind, count=len(recipients))
            return []
        copies = [(r, msg) for r in recipients]
        if self.tamper is not None and self.faults.behavior(sender, now) is not None:
            copies = self.tamper(sender, tuple(recipients), msg, now)
            self.counters.suppressed += len(recipients) - len(copies)
        scheduled = []
        lane = (sender, msg.size <= self.delay.control_bytes)
        depart = max(now, self.link_free[lane])
        for recipient, m in copies:
            depart += self.delay.transmission(m.size)
            at = depart + self.delay.propagation(sender, recipient, self.rng)
            self._push(at, recipient, _MSG, m)
            self.counters.messages_sent[sender] += 1
            self.counters.bytes_sent[sender] += m.size
            self.counters.by_kind[m.kind] += 1
            if self.record_trace:
                self.trace.append(("send", now, sender, recipient, m.kind, m.view, m.height, at))
            scheduled.append((recipient, at))
        self.link_free[lane] = depart
        return scheduled

    def set_timer(self, node: int, at: int, name: str, data=None) -> None:
        self._push(at, node, _TIMER, (name, data))

    # -- execution ---------------------------------------------------------

    def _invoke(self, node: int, t: int, fn) -> None:
        start = max(t, self.cpu_free[node])
        if self.faults.is_crashed(node, start):
            return
        port = Port(node, self)
        port.now = start
        proc = self.processes[node]
        proc.port = port
        fn(proc)
        proc.port = None
        end = start + int(port.cost) + self.costs.handle
        self.cpu_free[node] = end
        for recipients, msg in port.out:
            self.submit(node, recipients, msg, end)
        for at, name, data in port.timers:
            self._push(max(at, end), node, _TIMER, (name, data))

    def advance(self) -> bool:
        """Process the next event. Returns False once the queue is empty."""
        if not self.queue:
            return False
        at, _seq, node, kind, payload = heapq.heappop(self.queue)
        self.clock = at
        self.events_processed += 1
        if self.faults.is_crashed(node, at):
            if kind == _MSG and self.record_trace:
                self.trace.append(("drop", at, payload.sender, node, payload.kind, payload.view, payload.height, at))
            return True
        if kind == _MSG:
            if self.record_trace:
                self.trace.append(("deliver", at, payload.sender, node, payload.kind, payload.view, payload.height, at))
            self._invoke(node, at, lambda proc: proc.on_message(payload))
        else:
            name, data = payload
            self._invoke(node, at, lambda proc: proc.on_timer(name, data))
        return True

    def run_until(self, stop: Callable[[Simulator], bool] | None = None, time_cap: int | None = None) -> MetricsSnapshot:
        reason = "idle"
        while self.queue:
            if time_cap is not None and self.queue[0][0] > time_cap:
                reason = "time_cap"
                self.clock = time_cap
                break
            self.advance()
            if stop is not None and stop(self):
                reason = "stopped"
                break
        return MetricsSnapshot(self.counters, list(self.commits), self.clock, reason, len(self.processes))

    # -- records -----------------------------------------------------------

    def record_commit(self, rec: CommitRecord) -> None:
        self.commits.append(rec)
        if self.record_trace:
            self.trace.append(("commit", rec.time, rec.node, rec.node, "Commit", rec.view, rec.height, rec.time))
        for hook in self._commit_hooks:
            hook(rec)

    def log(self, event: str, node: int, t: int, **fields) -> None:
        if self.record_trace:
            self.trace.append((event, t, node, node, fields.get("kind", ""), fields.get("view", -1), fields.get("height", -1), t))

    def export_trace(self, path: str | Path) -> None:
        keys = ("event", "time", "sender", "recipient", "kind", "view", "height", "deliver_at")
        with open(path, "w") as fh:
            for row in self.trace:
                fh.write(json.dumps(dict(zip(keys, row)), separators=(",", ":")) + "\n")
