"""Assemble a runnable simulation from an :class:`ExperimentConfig`.

Every protocol shares the same cohort, region map (K-means groups) and delay
model, so paired runs differ only in the consensus logic.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .byzantine import make_tamperer
from .config import ExperimentConfig
from .grouping import (
    CohortSpec,
    GroupAssignment,
    NodeProfile,
    WeightParams,
    group_nodes,
    group_weights,
    load_cohort,
    synthesize_cohort,
)
from .identity import KeyRing, Signer, make_keyring
from .inter import InterNode, InterTiming
from .intra import IntraNode
from .ledger import Block, CertificateCheck, Chain, StoragePool, VehicleDataRecord
from .messages import INTRA_KINDS, commit_certificate_bytes
from .pbft import PbftNode
from .simnet import CostModel, DelayModel, FaultPlan, Simulator

_INTRA_TIMERS = ("election", "heartbeat")


class WrbftNode:
    """One consortium node under WRBFT: a weighted-Raft member that runs the
    inter-group BFT layer whenever it is its group's leader."""

    def __init__(self, intra: IntraNode, inter: InterNode, pool: StoragePool):
        self.intra = intra
        self.inter = inter
        self.pool = pool
        self._port = None
        intra.on_leader = inter.activate
        intra.on_step_down = inter.deactivate
        intra.on_leader_seen = inter.update_directory
        intra.on_promote = lambda block, t: inter.submit_batch(block.records, t)
        inter.on_commit = self._inter_committed

    @property
    def port(self):
        return self._port

    @port.setter
    def port(self, value) -> None:
        self._port = self.intra.port = self.inter.port = value

    def _inter_committed(self, block: Block, leftover: tuple) -> None:
        if leftover:
            self.pool.restore(leftover)
        self.intra.after_commit(block)

    def start(self) -> None:
        self.intra.start()

    def on_message(self, msg) -> None:
        if msg.kind in INTRA_KINDS:
            self.intra.on_message(msg)
        else:
            self.inter.on_message(msg)

    def on_timer(self, name: str, data) -> None:
        if name in _INTRA_TIMERS:
            self.intra.on_timer(name, data)
        else:
            self.inter.on_timer(name, data)


class RaftNode:
    """Flat Raft baseline: one weight-free, unsigned group; promotion commits locally."""

    def __init__(self, intra: IntraNode):
        self.intra = intra
        self._port = None
        intra.on_promote = self._promote

    @property
    def port(self):
        return self._port

    @port.setter
    def port(self, value) -> None:
        self._port = self.intra.port = value

    def _promote(self, block: Block, proposal_time: int) -> None:
        self.intra.chain.append(block)
        self._port.commit(block.height, block.block_hash, self.intra.view, proposal_time, block.record_count)
        self.intra.after_commit(block)

    def start(self) -> None:
        self.intra.start()

    def on_message(self, msg) -> None:
        self.intra.on_message(msg)

    def on_timer(self, name: str, data) -> None:
        self.intra.on_timer(name, data)


def record_source(node_id: int, payload_bytes: int) -> Callable[[int], list[VehicleDataRecord]]:
    """Saturated vehicle workload: deterministic records unique to ``node_id``."""
    counter = [0]
    filler = bytes(payload_bytes)

    def make(count: int) -> list[VehicleDataRecord]:
        out = []
        for _ in range(count):
            i = counter[0]
            counter[0] += 1
            out.append(VehicleDataRecord(f"veh-{node_id}-{i}", filler, i))
        return out

    return make


@dataclass
class Network:
    config: ExperimentConfig
    sim: Simulator
    profiles: list[NodeProfile]
    assignment: GroupAssignment
    keyring: KeyRing
    secrets: dict[int, int]
    chains: dict[int, Chain]
    nodes: dict[int, Any]
    faulty: set[int] = field(default_factory=set)

    @property
    def honest(self) -> list[int]:
        return [i for i in sorted(self.nodes) if i not in self.faulty]


def build_cohort(cfg: ExperimentConfig) -> list[NodeProfile]:
    if cfg.cohort:
        profiles = load_cohort(cfg.cohort)
        if len(profiles) != cfg.N:
            raise ValueError(f"cohort fixture has {len(profiles)} nodes but N={cfg.N}")
        return profiles
    return synthesize_cohort(cfg.N, cfg.topology_seed, CohortSpec(clusters=cfg.cohort_clusters))


def build_fault_plan(cfg: ExperimentConfig) -> FaultPlan:
    return FaultPlan(
        crashed={c.node: c.at_us for c in cfg.faults.crashed},
        byzantine={b.node: b.behavior for b in cfg.faults.byzantine},
        activation={b.node: b.at_us for b in cfg.faults.byzantine},
    )


def region_groups(cfg: ExperimentConfig, profiles: list[NodeProfile]) -> GroupAssignment:
    return group_nodes(profiles, cfg.K, rng_seed=cfg.topology_seed)


def build_network(cfg: ExperimentConfig) -> Network:
    profiles = build_cohort(cfg)
    assignment = region_groups(cfg, profiles)
    group_of = assignment.group_of()
    ids = [p.id for p in profiles]
    snr = {}
    for p in profiles:
        others = [q for q in ids if q != p.id]
        for q, value in zip(others, p.snr_row):
            snr[(p.id, q)] = value
    delay = DelayModel(region=dict(group_of), snr=snr, **cfg.delay)
    costs = CostModel(**cfg.costs)
    plan = build_fault_plan(cfg)
    keyring, secrets = make_keyring(ids, cfg.crypto_backend, cfg.seed)
    sim = Simulator(delay, costs, plan, seed=cfg.seed, record_trace=cfg.record_trace, tamper=make_tamperer(plan, secrets, cfg.crypto_backend, cfg.seed))
    chains: dict[int, Chain] = {}
    nodes: dict[int, Any] = {}
    params = WeightParams(**cfg.weight_params)

    if cfg.protocol == "wrbft":
        weights = group_weights(profiles, assignment, params)
        inter_quorum = 2 * ((cfg.K - 1) // 3) + 1
        timing = InterTiming(**cfg.inter_timing)
        share = cfg.tx_per_block // cfg.K
        for gid, members in enumerate(assignment.groups):
            outsiders = [i for i in ids if group_of[i] != gid]
            for i in members:
                check = CertificateCheck(inter_quorum, keyring.verify_certificate, commit_certificate_bytes, group_of.__getitem__)
                chain = chains[i] = Chain(certificate_check=check)
                pool = StoragePool(cfg.block_capacity, source=record_source(i, cfg.payload_bytes))
                signer = Signer(i, secrets[i], keyring, costs)
                intra = IntraNode(
                    i, gid, members, signer, chain, pool, weights[i], params,
                    random.Random(f"timeout:{cfg.seed}:{i}"), share, cfg.block_capacity,
                    outsiders=outsiders, eager_timeout=i in plan.byzantine,
                )
                inter = InterNode(i, gid, cfg.K, group_of, signer, chain, cfg.epsilon, timing, cfg.block_capacity)
                nodes[i] = signer.owner = WrbftNode(intra, inter, pool)
    elif cfg.protocol == "raft":
        for i in ids:
            chain = chains[i] = Chain()
            pool = StoragePool(cfg.block_capacity, source=record_source(i, cfg.payload_bytes))
            signer = Signer(i, secrets[i], keyring, costs)
            intra = IntraNode(
                i, 0, ids, signer, chain, pool, 0.0, params, random.Random(f"timeout:{cfg.seed}:{i}"),
                cfg.tx_per_block, cfg.block_capacity, weighted=False, eager_timeout=i in plan.byzantine, signed=False,
            )
            nodes[i] = signer.owner = RaftNode(intra)
    else:
        for i in ids:
            chain = chains[i] = Chain()
            pool = StoragePool(cfg.block_capacity, source=record_source(i, cfg.payload_bytes))
            signer = Signer(i, secrets[i], keyring, costs)
            nodes[i] = signer.owner = PbftNode(i, ids, signer, chain, pool, cfg.tx_per_block, cfg.block_capacity)

    for i, node in nodes.items():
        sim.add(i, node)
    return Network(cfg, sim, profiles, assignment, keyring, secrets, chains, nodes, plan.faulty())
