"""Test doubles and small builders shared by the unit tests."""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from wrbft.grouping import WeightParams
from wrbft.identity import Signer, make_keyring
from wrbft.inter import InterNode, InterTiming
from wrbft.intra import IntraNode
from wrbft.ledger import Chain, StoragePool, VehicleDataRecord
from wrbft.messages import Message, signing_bytes
from wrbft.simnet import CostModel, DelayModel, FaultPlan, Simulator
from wrbft.byzantine import make_tamperer


@dataclass
class FakePort:
    """Collects everything a handler emits instead of scheduling it."""

    node_id: int
    now: int = 0
    out: list[tuple[tuple[int, ...], Message]] = field(default_factory=list)
    timers: list[tuple[int, str, Any]] = field(default_factory=list)
    cost: float = 0.0
    hashes: int = 0
    invalid: int = 0
    commits: list[tuple] = field(default_factory=list)
    events: list[tuple[str, dict]] = field(default_factory=list)

    def send(self, to: int, msg: Message) -> None:
        self.out.append(((to,), msg))

    def broadcast(self, recipients, msg: Message) -> None:
        rs = tuple(r for r in recipients if r != self.node_id)
        if rs:
            self.out.append((rs, msg))

    def set_timer(self, at: int, name: str, data=None) -> None:
        self.timers.append((at, name, data))

    def charge(self, us: float) -> None:
        self.cost += us

    def count_hashes(self, n: int = 1) -> None:
        self.hashes += n

    def count_invalid(self) -> None:
        self.invalid += 1

    def commit(self, height, block_hash, view, proposal_time, tx_count, signers=()) -> None:
        self.commits.append((height, block_hash, view, proposal_time, tx_count, tuple(signers)))

    def log(self, event: str, **fields) -> None:
        self.events.append((event, fields))

    # -- inspection helpers --

    def sent(self, kind: str) -> list[tuple[tuple[int, ...], Message]]:
        return [(rs, m) for rs, m in self.out if m.kind == kind]

    def clear(self) -> None:
        self.out.clear()
        self.timers.clear()


def records(n: int, tag: str = "v") -> list[VehicleDataRecord]:
    return [VehicleDataRecord(f"{tag}-{i}", bytes(16), i) for i in range(n)]


def signed(signer: Signer, kind: str, view: int, block_hash: bytes = b"", height: int = 0, **kw) -> Message:
    sig = signer.sign(signing_bytes(kind, view, block_hash, height, signer.node_id))
    return Message(kind, signer.node_id, view, block_hash, height, signature=sig, **kw)


# -- intra-group fixtures -------------------------------------------------------


@dataclass
class IntraGroup:
    nodes: dict[int, IntraNode]
    ports: dict[int, FakePort]
    signers: dict[int, Signer]


def intra_group(size: int, weights=None, pool_records: int = 0, share: int = 2000, capacity: int = 2000, seed: int = 0) -> IntraGroup:
    ids = list(range(size))
    keyring, secrets = make_keyring(ids, "toy", seed)
    costs = CostModel()
    params = WeightParams()
    nodes, ports, signers = {}, {}, {}
    for i in ids:
        pool = StoragePool(capacity)
        for r in records(pool_records, f"n{i}"):
            pool.submit(r)
        signers[i] = Signer(i, secrets[i], keyring, costs)
        w = weights[i] if weights else 0.5
        node = IntraNode(i, 0, ids, signers[i], Chain(), pool, w, params, random.Random(f"{seed}:{i}"), share, capacity)
        ports[i] = node.port = FakePort(i)
        signers[i].owner = node
        nodes[i] = node
    return IntraGroup(nodes, ports, signers)


def make_leader(group: IntraGroup, leader: int, view: int = 1) -> IntraNode:
    """Put ``leader`` in charge of ``view`` and tell every follower."""
    node = group.nodes[leader]
    node.view = view
    node._become_leader()
    for i, other in group.nodes.items():
        if i != leader:
            other.view = view
            other.leader_id = leader
    return node


# -- leaders-only inter-group simulation --------------------------------------------


class LeaderProcess:
    """One group leader running only the inter-group layer, fed a fixed-size batch per height."""

    def __init__(self, inter: InterNode, batch: int, group_ids: list[int]):
        self.inter = inter
        self.batch = batch
        self.group_ids = group_ids
        self._port = None
        self.height_batches = 0
        inter.on_commit = self._committed

    @property
    def port(self):
        return self._port

    @port.setter
    def port(self, value):
        self._port = self.inter.port = value

    def _next_batch(self) -> None:
        self.height_batches += 1
        recs = records(self.batch, f"g{self.inter.node_id}h{self.height_batches}")
        self.inter.submit_batch(recs, self.port.now)

    def _committed(self, block, leftover) -> None:
        self._next_batch()

    def start(self) -> None:
        for g in self.group_ids:
            self.inter.update_directory(g, g, 0)
        self.inter.activate()
        self._next_batch()

    def on_message(self, msg) -> None:
        self.inter.on_message(msg)

    def on_timer(self, name, data) -> None:
        self.inter.on_timer(name, data)


@dataclass
class LeaderNet:
    sim: Simulator
    procs: dict[int, LeaderProcess]
    chains: dict[int, Chain]
    secrets: dict[int, int]

    def run_to_height(self, height: int, honest, cap_us: int = 120_000_000):
        honest = set(honest)
        self.sim.run_until(lambda s: all(self.chains[i].height >= height for i in honest), time_cap=cap_us)
        return self.sim

    def sends(self, height: int) -> Counter:
        return Counter(row[4] for row in self.sim.trace if row[0] == "send" and row[6] == height)


def leader_net(k: int, epsilon: float = 0.8, byzantine: dict[int, str] | None = None, seed: int = 0, batch: int = 4, timing: InterTiming | None = None, activation: dict[int, int] | None = None) -> LeaderNet:
    ids = list(range(k))
    group_of = {i: i for i in ids}
    keyring, secrets = make_keyring(ids, "toy", seed)
    costs = CostModel()
    plan = FaultPlan(byzantine=dict(byzantine or {}), activation=dict(activation or {}))
    sim = Simulator(DelayModel(), costs, plan, seed=seed, tamper=make_tamperer(plan, secrets, "toy", seed))
    procs, chains = {}, {}
    for i in ids:
        signer = Signer(i, secrets[i], keyring, costs)
        chains[i] = Chain()
        inter = InterNode(i, i, k, group_of, signer, chains[i], epsilon, timing or InterTiming())
        procs[i] = signer.owner = LeaderProcess(inter, batch, ids)
        sim.add(i, procs[i])
    sim.start()
    return LeaderNet(sim, procs, chains, secrets)
