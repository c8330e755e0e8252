from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wrbft.byzantine import Tamperer, conflicting_block
from wrbft.config import load_config
from wrbft.crypto import Signature, sign, verify
from wrbft.harness import run_experiment
from wrbft.identity import make_keyring
from wrbft.ledger import Chain, create_block
from wrbft.messages import PRE_PREPARE, PREPARE1, Message, signing_bytes
from wrbft.simnet import CommitRecord, CostModel, CounterSet, DelayModel, FaultPlan, MetricsSnapshot, Simulator, energy_proxy

from support import records

GOLDEN = Path(__file__).parent / "golden" / "trace.json"


class Echo:
    """Records deliveries; optionally sends a scripted batch from ``start``."""

    def __init__(self, script=(), cost: int = 0, reply: bool = False):
        self.port = None
        self.script = list(script)
        self.cost = cost
        self.reply = reply
        self.got: list[tuple[int, Message]] = []
        self.timers: list[tuple[int, str]] = []

    def start(self):
        for to, msg in self.script:
            self.port.send(to, msg)

    def on_message(self, msg):
        self.port.charge(self.cost)
        self.got.append((self.port.now, msg))
        if self.reply and msg.view < 3:
            self.port.send(msg.sender, Message(PREPARE1, self.port.node_id, msg.view + 1))

    def on_timer(self, name, data):
        self.timers.append((self.port.now, name))


def msg(sender=0, view=0, size=100, kind=PREPARE1):
    return Message(kind, sender, view, size=size)


def sim_with(procs: dict, faults=None, seed=0, delay=None, **kw) -> Simulator:
    sim = Simulator(delay or DelayModel(), CostModel(), faults, seed=seed, **kw)
    for i, p in procs.items():
        sim.add(i, p)
    return sim


# -- delay model ---------------------------------------------------------------------


def test_propagation_deterministic_for_seed():
    d = DelayModel(region={0: 0, 1: 1})
    a = [d.propagation(0, 1, random.Random(5)) for _ in range(3)]
    assert len(set(a)) == 1
    r1, r2 = random.Random(9), random.Random(9)
    assert [d.propagation(0, 1, r1) for _ in range(50)] == [d.propagation(0, 1, r2) for _ in range(50)]


def test_base_delay_by_region():
    d = DelayModel(region={0: 0, 1: 0, 2: 1})
    assert d.base(0, 1) == 5_000 and d.base(0, 2) == 15_000
    assert d.base(7, 8) == 15_000  # unknown nodes are treated as remote


@pytest.mark.parametrize("snr,penalty", [(30.0, 0), (45.0, 0), (0.0, 10_000), (-5.0, 10_000), (15.0, 5_000)])
def test_snr_penalty_examples(snr, penalty):
    assert DelayModel().snr_penalty(snr) == penalty


def test_lower_snr_never_faster_on_average():
    rng_hi, rng_lo = random.Random(1), random.Random(1)
    hi = DelayModel(snr={(0, 1): 28.0})
    lo = DelayModel(snr={(0, 1): 6.0})
    a = [hi.propagation(0, 1, rng_hi) for _ in range(1000)]
    b = [lo.propagation(0, 1, rng_lo) for _ in range(1000)]
    assert sum(b) / 1000 > sum(a) / 1000
    assert all(y >= x for x, y in zip(a, b))  # same jitter draws, larger penalty


@given(st.floats(min_value=-10, max_value=50), st.floats(min_value=-10, max_value=50))
def test_penalty_monotone(a, b):
    d = DelayModel()
    lo, hi = sorted((a, b))
    assert d.snr_penalty(lo) >= d.snr_penalty(hi)


@pytest.mark.parametrize("size,us", [(0, 1), (1, 1), (125, 10), (2_000_000, 160_000)])
def test_transmission_time(size, us):
    assert DelayModel().transmission(size) == us


# -- scheduling --------------------------------------------------------------------------


def test_no_traffic_means_idle_and_no_commits():
    sim = sim_with({0: Echo(), 1: Echo()})
    sim.start()
    snap = sim.run_until(lambda s: False)
    assert snap.reason == "idle" and snap.commits == [] and snap.counters.total_messages == 0


def test_time_cap_stops_run():
    sim = sim_with({0: Echo(reply=True), 1: Echo(script=[(0, msg(1))], reply=True)})
    sim.start()
    snap = sim.run_until(None, time_cap=1)
    assert snap.reason == "time_cap" and snap.end_time == 1


def test_same_timestamp_events_pop_in_sequence_order():
    p = Echo()
    sim = sim_with({0: p})
    for name in ("a", "b", "c"):
        sim.set_timer(0, 100, name)
    sim.run_until()
    assert [n for _, n in p.timers] == ["a", "b", "c"]


def test_messages_to_crashed_node_consumed_without_handler():
    target = Echo()
    sim = sim_with({0: Echo(script=[(1, msg())]), 1: target}, faults=FaultPlan(crashed={1: 0}))
    sim.start()
    sim.run_until()
    assert target.got == []
    assert [r[0] for r in sim.trace] == ["send", "drop"]


def test_crashed_sender_suppressed():
    sim = sim_with({0: Echo(), 1: Echo()}, faults=FaultPlan(crashed={0: 0}))
    assert sim.submit(0, [1], msg(), 10) == []
    assert sim.counters.suppressed == 1 and sim.counters.total_messages == 0


def test_cpu_serializes_handlers():
    # two messages landing together: the second waits for the first handler's cost
    target = Echo(cost=1_000)
    delay = DelayModel(jitter=0.0, region={0: 0, 1: 0, 2: 0})
    sim = sim_with({0: Echo(script=[(2, msg(0))]), 1: Echo(script=[(2, msg(1))]), 2: target}, delay=delay)
    sim.start()
    sim.run_until()
    (t1, _), (t2, _) = target.got
    assert t2 >= t1 + 1_000


def test_control_frames_skip_bulk_queue():
    delay = DelayModel(jitter=0.0, region={0: 0, 1: 0})
    sim = sim_with({0: Echo(), 1: Echo()}, delay=delay)
    [(_, bulk_at)] = sim.submit(0, [1], msg(size=1_000_000), 0)
    [(_, small_at)] = sim.submit(0, [1], msg(size=100), 0)
    assert small_at < bulk_at
    assert bulk_at == 80_000 + 5_000


def test_fault_plan_validation():
    with pytest.raises(ValueError, match="both crashed and byzantine"):
        FaultPlan(crashed={1: 0}, byzantine={1: "silent"})
    with pytest.raises(ValueError, match="unknown byzantine behavior"):
        FaultPlan(byzantine={2: "sneaky"})
    plan = FaultPlan(byzantine={3: "silent"}, activation={3: 100})
    assert plan.behavior(3, 99) is None and plan.behavior(3, 100) == "silent"
    assert plan.faulty() == {3}


def ping_pong(seed: int, n: int = 5) -> Simulator:
    procs = {i: Echo(script=[((i + 1) % n, msg(i))] * 3, reply=True, cost=37) for i in range(n)}
    sim = sim_with(procs, seed=seed)
    sim.start()
    sim.run_until()
    return sim


def test_same_seed_same_trace():
    assert ping_pong(4).trace == ping_pong(4).trace
    assert ping_pong(4).trace != ping_pong(5).trace


def test_counters_conserved_and_causal():
    sim = ping_pong(2)
    c = sim.counters
    assert c.total_messages == c.send_attempts - c.suppressed
    sends = [r for r in sim.trace if r[0] == "send"]
    delivers = [r for r in sim.trace if r[0] == "deliver"]
    assert len(sends) == len(delivers) == c.total_messages
    for s in sends:
        assert s[7] > s[1]
    assert sorted(r[1] for r in delivers) == sorted(s[7] for s in sends)
    assert [r[1] for r in delivers] == sorted(r[1] for r in delivers)


def test_export_trace_ndjson(tmp_path):
    sim = ping_pong(1, n=2)
    path = tmp_path / "t.ndjson"
    sim.export_trace(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(sim.trace)
    assert set(rows[0]) == {"event", "time", "sender", "recipient", "kind", "view", "height", "deliver_at"}


# -- byzantine transforms ---------------------------------------------------------------


def preprepare_from(sender: int, secrets) -> Message:
    block = create_block(Chain().tip, records(4), 0, sender, 10)
    data = signing_bytes(PRE_PREPARE, 0, block.block_hash, 1, sender)
    sig = sign(data, secrets[sender], "toy").value
    return Message(PRE_PREPARE, sender, 0, block.block_hash, 1, payload=block, signature=sig, size=500)


def test_equivocation_splits_recipients_in_halves():
    ring, secrets = make_keyring(range(7), "toy")
    plan = FaultPlan(byzantine={0: "equivocate"})
    tamper = Tamperer(plan, {0: secrets[0]}, "toy")
    pp = preprepare_from(0, secrets)
    out = tamper(0, (6, 1, 2, 3, 4, 5), pp, 0)
    by_hash = {}
    for r, m in out:
        by_hash.setdefault(m.block_hash, []).append(r)
        assert verify(signing_bytes(PRE_PREPARE, 0, m.block_hash, 1, 0), ring.public_keys[0], Signature(m.signature), "toy")
        assert m.payload.block_hash == m.block_hash
    assert by_hash == {pp.block_hash: [1, 2, 3], conflicting_block(pp.payload, pp.block_hash).block_hash: [4, 5, 6]}


def test_silent_and_bad_signature_transforms():
    _, secrets = make_keyring(range(4), "toy")
    pp = preprepare_from(1, secrets)
    silent = Tamperer(FaultPlan(byzantine={1: "silent"}), {1: secrets[1]}, "toy")
    assert silent(1, (0, 2), pp, 0) == []
    garble = Tamperer(FaultPlan(byzantine={1: "bad_signature"}), {1: secrets[1]}, "toy")
    out = garble(1, (0, 2), pp, 0)
    assert all(m.signature != pp.signature and m.block_hash == pp.block_hash for _, m in out)


def test_silent_tamper_counted_as_suppressed():
    _, secrets = make_keyring(range(3), "toy")
    plan = FaultPlan(byzantine={0: "silent"})
    sim = sim_with({i: Echo() for i in range(3)}, faults=plan, tamper=Tamperer(plan, {0: secrets[0]}, "toy"))
    sim.submit(0, [1, 2], preprepare_from(0, secrets), 0)
    assert sim.counters.suppressed == 2 and sim.counters.total_messages == 0
    sim.submit(0, [1, 2], msg(kind="Heartbeat"), 0)  # intra-group traffic passes untouched
    assert sim.counters.total_messages == 2


def test_replay_sends_older_view():
    _, secrets = make_keyring(range(2), "toy")
    tamper = Tamperer(FaultPlan(byzantine={0: "replay_old_view"}), {0: secrets[0]}, "toy")
    first = Message(PREPARE1, 0, 0, b"a", 1)
    second = Message(PREPARE1, 0, 1, b"b", 2)
    assert tamper(0, (1,), first, 0) == [(1, first)]
    assert tamper(0, (1,), second, 0) == [(1, first)]


# -- metrics -----------------------------------------------------------------------------


def counters(msgs: dict, hashes: dict) -> CounterSet:
    c = CounterSet()
    c.messages_sent.update(msgs)
    c.hash_invocations.update(hashes)
    return c


@pytest.mark.parametrize(
    "msgs,hashes,c_msg,c_hash,n,expected",
    [
        ({0: 10}, {0: 5}, 2.0, 1.0, 1, (25.0, 25.0)),
        ({0: 4, 1: 6}, {2: 10}, 1.0, 0.5, None, (15.0, 5.0)),
        ({0: 4, 1: 6}, {}, 1.0, 0.5, 10, (10.0, 1.0)),
        ({}, {}, 1.0, 1.0, 4, (0.0, 0.0)),
    ],
)
def test_energy_proxy_examples(msgs, hashes, c_msg, c_hash, n, expected):
    assert energy_proxy(counters(msgs, hashes), c_msg, c_hash, n) == pytest.approx(expected)


def test_energy_proxy_rejects_negative_costs():
    with pytest.raises(ValueError):
        energy_proxy(CounterSet(), -1.0, 0.0)


def test_commit_latencies_skip_replica_side_records():
    recs = [
        CommitRecord(0, 1, b"x", 0, 500, 100, 3),
        CommitRecord(1, 1, b"x", 0, 450, -1, 3),
        CommitRecord(2, 1, b"x", 0, 700, 100, 3),
        CommitRecord(0, 2, b"y", 1, 900, 600, 3),
    ]
    snap = MetricsSnapshot(CounterSet(), recs, 1000, "idle", 3)
    assert snap.commit_latencies() == {1: 400, 2: 300}


def test_wrbft_spends_less_energy_than_pbft_at_n40():
    base = dict(N=40, K=4, blocks_to_commit=4, tx_per_block=200)
    w = run_experiment(load_config({**base, "protocol": "wrbft"}))
    p = run_experiment(load_config({**base, "protocol": "pbft"}))
    assert w.verdict == p.verdict == "safe"
    assert w.sys_energy < p.sys_energy


# -- golden trace ------------------------------------------------------------------------


def small_run_digest(tmp_path) -> dict:
    cfg = load_config({"N": 12, "K": 3, "blocks_to_commit": 3, "tx_per_block": 50, "seed": 7})
    report = run_experiment(cfg, tmp_path)
    trace = (tmp_path / "wrbft_N12_K3_s7.trace.ndjson").read_bytes()
    return {"trace_sha256": hashlib.sha256(trace).hexdigest(), "msgs_total": report.msgs_total, "committed_height": report.committed_height}


def test_trace_matches_golden(tmp_path):
    assert small_run_digest(tmp_path) == json.loads(GOLDEN.read_text())
