from __future__ import annotations

import random
from collections import defaultdict

import pytest

from wrbft.grouping import WeightParams
from wrbft.identity import Signer, make_keyring
from wrbft.intra import CANDIDATE, FOLLOWER, LEADER, IntraNode, crash_budget, survivable_crashes
from wrbft.ledger import Chain, StoragePool, create_block
from wrbft.messages import BLOCK_CONFIRM, BLOCK_PROPOSAL, COMMIT_NOTICE, REPLY_VOTE, REQUEST_VOTE, Message
from wrbft.simnet import CostModel, DelayModel, FaultPlan, Simulator

from support import intra_group, make_leader, records, signed


@pytest.mark.parametrize("m,f", [(1, 0), (2, 0), (3, 1), (4, 1), (7, 3), (10, 4)])
def test_crash_budget(m, f):
    assert crash_budget(m) == f


def campaign(group, node_id=0):
    node = group.nodes[node_id]
    port = group.ports[node_id]
    node.start()
    port.now = node.timeout_deadline
    node.on_clock(node.timeout_deadline)
    ((rs, msg),) = port.sent(REQUEST_VOTE)
    return node, rs, msg


# -- election ----------------------------------------------------------------------------


def test_deadline_starts_campaign():
    g = intra_group(4)
    node, rs, msg = campaign(g)
    assert node.role == CANDIDATE and node.view == 1
    assert rs == (1, 2, 3) and msg.view == 1


def test_early_clock_tick_does_nothing():
    g = intra_group(4)
    node = g.nodes[0]
    node.start()
    g.ports[0].now = node.timeout_deadline - 1
    node.on_clock(node.timeout_deadline)
    assert node.role == FOLLOWER and not g.ports[0].sent(REQUEST_VOTE)


def test_leader_ignores_clock():
    g = intra_group(4)
    leader = make_leader(g, 0)
    g.ports[0].clear()
    g.ports[0].now = 10**9
    leader.on_clock(None)
    assert leader.role == LEADER and not g.ports[0].out


def test_vote_granted_once_per_view():
    g = intra_group(4)
    _, _, req = campaign(g, 0)
    voter, port = g.nodes[1], g.ports[1]
    voter.on_request_vote(req)
    assert [m.kind for _, m in port.out] == [REPLY_VOTE]
    # a rival candidate in the same view gets nothing
    rival = Message(REQUEST_VOTE, 2, 1, height=0, signature=signed(g.signers[2], REQUEST_VOTE, 1).signature, extra=req.extra)
    port.clear()
    voter.on_request_vote(rival)
    assert not port.sent(REPLY_VOTE)


def test_stale_request_dropped():
    g = intra_group(4)
    _, _, req = campaign(g, 0)
    g.nodes[1].view = 5
    g.nodes[1].on_request_vote(req)
    assert not g.ports[1].out


def test_bad_signature_dropped_and_counted():
    g = intra_group(4)
    _, _, req = campaign(g, 0)
    forged = Message(req.kind, req.sender, req.view, height=req.height, signature=b"\x00" * 8, extra=req.extra)
    g.nodes[1].on_request_vote(forged)
    assert not g.ports[1].out and g.ports[1].invalid == 1


def test_voter_refuses_candidate_behind_it():
    g = intra_group(4)
    _, _, req = campaign(g, 0)
    voter = g.nodes[1]
    voter.chain.append(create_block(voter.chain.tip, records(1), 0, 1))
    voter.on_request_vote(req)
    assert not g.ports[1].sent(REPLY_VOTE)


def reply(g, sender, view):
    return signed(g.signers[sender], REPLY_VOTE, view)


@pytest.mark.parametrize("size,needed", [(4, 2), (7, 4), (10, 5)])
def test_leader_at_f_plus_one_replies(size, needed):
    g = intra_group(size)
    node, _, req = campaign(g, 0)
    for voter in range(1, needed):
        node.on_reply_vote(reply(g, voter, req.view))
        node.on_reply_vote(reply(g, voter, req.view))  # duplicates do not count
        assert node.role == CANDIDATE
    node.on_reply_vote(reply(g, needed, req.view))
    assert node.role == LEADER and node.leader_id == 0


# -- proposal and confirm ---------------------------------------------------------------------


@pytest.mark.parametrize("pool,share,expected,left", [(5, 2000, 5, 0), (0, 2000, 0, 0), (2500, 2000, 2000, 500)])
def test_proposal_contents(pool, share, expected, left):
    g = intra_group(4, pool_records=pool, share=share)
    make_leader(g, 0)
    ((rs, msg),) = g.ports[0].sent(BLOCK_PROPOSAL)
    assert rs == (1, 2, 3)
    assert msg.payload.record_count == expected and len(g.nodes[0].pool) == left
    assert msg.payload.is_empty == (expected == 0)


def proposal_from(g, leader=0, view=1):
    make_leader(g, leader, view)
    ((_, msg),) = g.ports[leader].sent(BLOCK_PROPOSAL)
    return msg


def test_valid_proposal_confirmed():
    g = intra_group(4, pool_records=3)
    msg = proposal_from(g)
    g.nodes[1].on_block_proposal(msg)
    ((rs, confirm),) = g.ports[1].sent(BLOCK_CONFIRM)
    assert rs == (0,) and confirm.block_hash == msg.block_hash


def test_tampered_proposal_dropped():
    g = intra_group(4, pool_records=3)
    msg = proposal_from(g)
    block = msg.payload
    bad_block = type(block)(**{**block.__dict__, "records": tuple(records(3, "evil"))})
    bad = Message(msg.kind, msg.sender, msg.view, msg.block_hash, msg.height, payload=bad_block, signature=msg.signature)
    g.nodes[1].on_block_proposal(bad)
    assert not g.ports[1].sent(BLOCK_CONFIRM) and g.ports[1].invalid == 1


def test_proposal_from_non_leader_dropped():
    g = intra_group(4, pool_records=3)
    msg = proposal_from(g)
    g.nodes[2].leader_id = 0
    impostor = create_block(g.nodes[3].chain.tip, records(1), 1, 3)
    fake = signed(g.signers[3], BLOCK_PROPOSAL, 1, impostor.block_hash, impostor.height, payload=impostor)
    g.nodes[2].on_block_proposal(fake)
    assert not g.ports[2].sent(BLOCK_CONFIRM) and g.ports[2].invalid == 1
    g.nodes[2].on_block_proposal(msg)
    assert g.ports[2].sent(BLOCK_CONFIRM)


@pytest.mark.parametrize("size,needed", [(4, 2), (10, 5)])
def test_promotion_at_f_plus_one_confirms(size, needed):
    g = intra_group(size, pool_records=2)
    promoted = []
    g.nodes[0].on_promote = lambda block, t: promoted.append(block)
    msg = proposal_from(g)
    for i in range(1, needed + 1):
        g.nodes[i].on_block_proposal(msg)
        ((_, confirm),) = g.ports[i].sent(BLOCK_CONFIRM)
        stale = signed(g.signers[i], BLOCK_CONFIRM, msg.view - 1, msg.block_hash, msg.height)
        g.nodes[0].on_block_confirm(stale)
        assert not promoted
        g.nodes[0].on_block_confirm(confirm)
        g.nodes[0].on_block_confirm(confirm)
        assert len(promoted) == (i == needed)
    assert promoted[0].block_hash == msg.block_hash


def test_proposal_that_overtakes_its_commit_notice_is_confirmed_later():
    g = intra_group(4, pool_records=10, share=2)
    leader = make_leader(g, 0)
    follower, port = g.nodes[1], g.ports[1]
    first = g.ports[0].sent(BLOCK_PROPOSAL)[0][1]
    follower.on_block_proposal(first)
    leader.chain.append(first.payload)
    g.ports[0].clear()
    leader.after_commit(first.payload)
    notice = g.ports[0].sent(COMMIT_NOTICE)[0][1]
    second = g.ports[0].sent(BLOCK_PROPOSAL)[0][1]
    port.clear()
    follower.on_block_proposal(second)  # arrives first: height 2 while the follower sits at 0
    assert not port.sent(BLOCK_CONFIRM)
    follower.on_commit_notice(notice)
    ((_, confirm),) = port.sent(BLOCK_CONFIRM)
    assert confirm.height == 2 and follower.chain.height == 1


def test_commit_notices_applied_in_order():
    g = intra_group(4, pool_records=10, share=1)
    leader = make_leader(g, 0)
    notices = []
    for _ in range(3):
        block = leader.proposal
        leader.chain.append(block)
        g.ports[0].clear()
        leader.after_commit(block)
        notices.append(g.ports[0].sent(COMMIT_NOTICE)[0][1])
    follower = g.nodes[2]
    for n in reversed(notices):
        follower.on_commit_notice(n)
    assert follower.chain.hashes() == leader.chain.hashes()


# -- simulated properties -----------------------------------------------------------------


def simulate_group(size: int, crashed: dict[int, int], seed: int, until_us: int):
    ids = list(range(size))
    costs = CostModel()
    sim = Simulator(DelayModel(region={i: 0 for i in ids}), costs, FaultPlan(crashed=crashed), seed=seed)
    keyring, secrets = make_keyring(ids, "toy", seed)
    nodes = {}
    for i in ids:
        signer = Signer(i, secrets[i], keyring, costs)
        rng = random.Random(f"{seed}:{i}")
        nodes[i] = IntraNode(i, 0, ids, signer, Chain(), StoragePool(1), rng.random(), WeightParams(), rng, 0, 1)
        signer.owner = nodes[i]
        sim.add(i, nodes[i])
    sim.start()
    sim.run_until(None, time_cap=until_us)
    return sim


@pytest.mark.parametrize("m,c", [(4, 1), (5, 1), (7, 2), (10, 4), (11, 4)])
def test_survivable_crashes(m, c):
    assert survivable_crashes(m) == c
    assert m - c - 1 >= crash_budget(m) + 1  # replies still reachable


def test_odd_group_at_full_budget_cannot_elect():
    # m = 2f+1 with f crashed leaves f live peers, one short of the f+1 replies required
    sim = simulate_group(5, {3: 0, 4: 0}, 0, until_us=10_000_000)
    assert not any(row[0] == "leader" for row in sim.trace)


@pytest.mark.parametrize("seed", range(12))
def test_election_safety_and_liveness_under_crashes(seed):
    size = 5 + seed % 4
    rng = random.Random(seed)
    crashed = {n: rng.randrange(0, 2_000_000) for n in rng.sample(range(size), survivable_crashes(size))}
    sim = simulate_group(size, crashed, seed, until_us=20_000_000)
    leaders = defaultdict(set)
    first = None
    for event, t, node, *_rest in sim.trace:
        if event == "leader":
            view = _rest[2]
            leaders[view].add(node)
            if first is None:
                first = t
    assert all(len(nodes) == 1 for nodes in leaders.values())
    max_timeout_us = int((WeightParams().t2 + WeightParams().tau) * 1000)
    assert first is not None and first <= 10 * max_timeout_us
    alive = [n for i, n in sim.processes.items() if i not in crashed]
    assert any(n.role == LEADER for n in alive)  # re-elected after every crash
