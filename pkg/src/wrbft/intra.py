"""Weighted Raft inside one group: election, Block-Proposal, Block-Confirm.

One block is in flight per leader term (single-slot); there is no log
replication.  A leader that collects f+1 confirmations hands its candidate to
``on_promote`` -- the inter-group layer under WRBFT, a local commit under the
flat Raft baseline.
"""
from __future__ import annotations

import random
from typing import Callable, Sequence

from .grouping import WeightParams, sample_timeout
from .identity import Signer
from .ledger import Block, Chain, ForkError, LedgerError, StoragePool, create_block, records_size
from .messages import (
    BLOCK_CONFIRM,
    BLOCK_PROPOSAL,
    COMMIT_NOTICE,
    HEADER_SIZE,
    HEARTBEAT,
    LEADER_ANNOUNCE,
    REPLY_VOTE,
    REQUEST_VOTE,
    Message,
    signing_bytes,
)


LEADER, CANDIDATE, FOLLOWER = "leader", "candidate", "follower"
MS = 1000


def crash_budget(group_size: int) -> int:
    """f = floor((m - 1) / 2)."""
    return (group_size - 1) // 2


def survivable_crashes(group_size: int) -> int:
    """Crashes after which a candidate can still collect f+1 replies from live peers.

    Equals f for even group sizes and f - 1 for odd ones.
    """
    return max(0, group_size - crash_budget(group_size) - 2)


class IntraNode:
    def __init__(
        self,
        node_id: int,
        group_id: int,
        members: Sequence[int],
        signer: Signer,
        chain: Chain,
        pool: StoragePool,
        weight: float,
        params: WeightParams,
        rng: random.Random,
        share: int,
        capacity: int,
        outsiders: Sequence[int] = (),
        weighted: bool = True,
        eager_timeout: bool = False,
        signed: bool = True,
    ):
        self.node_id = node_id
        self.group_id = group_id
        self.members = tuple(sorted(members))
        self.peers = tuple(m for m in self.members if m != node_id)
        self.f = crash_budget(len(self.members))
        self.signer = signer
        self.chain = chain
        self.pool = pool
        self.weight = weight if weighted else 0.0
        self.params = params if weighted else WeightParams(
            params.alpha, params.beta, params.gamma, params.t1, params.t2, 0.0, 0.0
        )
        self.rng = rng
        self.share = share
        self.capacity = capacity
        self.outsiders = tuple(outsiders)
        self.eager_timeout = eager_timeout  # adversarial nodes campaign at t1
        self.signed = signed  # False: crash-fault setting over authenticated links
        self.heartbeat_us = int(params.t1 * MS / 3)

        self.port = None
        self.role = FOLLOWER
        self.view = 0
        self.is_vote = False
        self.leader_id: int | None = None
        self.timeout_deadline = 0
        self.votes: set[int] = set()
        self.pending_block: Block | None = None
        self.accept_view = -1  # view in which pending_block was last accepted
        self.proposal: Block | None = None
        self.proposal_time = 0
        self.confirms: set[int] = set()
        self.promoted = False
        self.ready_to_propose = True
        self._notice_buffer: dict[int, Block] = {}
        self._early_proposal: Message | None = None  # overtook the notice it builds on

        self.on_promote: Callable[[Block, int], None] | None = None
        self.on_leader: Callable[[], None] | None = None
        self.on_leader_seen: Callable[[int, int, int], None] | None = None
        self.on_step_down: Callable[[], None] | None = None

    # -- helpers -----------------------------------------------------------

    @property
    def now(self) -> int:
        return self.port.now

    def _sign(self, kind: str, view: int, block_hash: bytes = b"", height: int = 0) -> bytes:
        if not self.signed:
            return b""
        return self.signer.sign(signing_bytes(kind, view, block_hash, height, self.node_id))

    def _valid(self, msg: Message) -> bool:
        if not self.signed:
            return True
        ok = self.signer.verify(msg.sender, signing_bytes(msg.kind, msg.view, msg.block_hash, msg.height, msg.sender), msg.signature)
        if not ok:
            self.port.count_invalid()
        return ok

    def _timeout_us(self) -> int:
        if self.eager_timeout:
            return int(self.params.t1 * MS)
        return int(sample_timeout(self.weight, self.params, self.rng) * MS)

    def last_key(self) -> tuple[int, int, int]:
        """Order on what a node holds: an accepted-but-uncommitted block for the next
        height ranks by the view it was accepted in; a committed tip ranks above both.
        A voter refuses candidates that hold less than it does."""
        pb = self.pending_block
        if pb is not None and pb.height == self.chain.height + 1:
            return (pb.height, 1, self.accept_view)
        return (self.chain.height, 2, 0)

    def reset_deadline(self) -> None:
        self.timeout_deadline = self.now + self._timeout_us()
        self.port.set_timer(self.timeout_deadline, "election", self.timeout_deadline)

    def _adopt_view(self, view: int) -> None:
        if view > self.view:
            was_leader = self.role == LEADER
            self.view = view
            self.is_vote = False
            self.votes = set()
            self.role = FOLLOWER
            self.proposal = None
            if was_leader and self.on_step_down:
                self.on_step_down()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if len(self.members) == 1:
            self._become_leader()
            return
        self.reset_deadline()

    def on_timer(self, name: str, data) -> None:
        if name == "election":
            self.on_clock(data)
        elif name == "heartbeat" and self.role == LEADER and data == self.view:
            self._heartbeat()

    def on_clock(self, token: int | None = None) -> None:
        """Election timer: followers/candidates whose deadline passed start a new term."""
        if self.role == LEADER:
            return
        if token is not None and token != self.timeout_deadline:
            return
        if self.now < self.timeout_deadline:
            self.port.set_timer(self.timeout_deadline, "election", self.timeout_deadline)
            return
        self.role = CANDIDATE
        self.view += 1
        self.is_vote = True  # a candidate does not vote for anyone else this term
        self.votes = set()
        self.leader_id = None
        self.port.log("campaign", view=self.view)
        sig = self._sign(REQUEST_VOTE, self.view, b"", self.chain.height)
        self.port.broadcast(
            self.peers, Message(REQUEST_VOTE, self.node_id, self.view, height=self.chain.height, signature=sig, extra=self.last_key())
        )
        self.reset_deadline()

    def on_message(self, msg: Message) -> None:
        handler = {
            REQUEST_VOTE: self.on_request_vote,
            REPLY_VOTE: self.on_reply_vote,
            BLOCK_PROPOSAL: self.on_block_proposal,
            BLOCK_CONFIRM: self.on_block_confirm,
            HEARTBEAT: self.on_heartbeat,
            COMMIT_NOTICE: self.on_commit_notice,
            LEADER_ANNOUNCE: self.on_leader_announce,
        }.get(msg.kind)
        if handler is not None:
            handler(msg)

    # -- election ----------------------------------------------------------

    def on_request_vote(self, msg: Message) -> None:
        if msg.view < self.view or not self._valid(msg):
            return
        self._adopt_view(msg.view)
        if self.is_vote or msg.height < self.chain.height or tuple(msg.extra) < self.last_key():
            return
        self.is_vote = True
        sig = self._sign(REPLY_VOTE, self.view)
        self.port.send(msg.sender, Message(REPLY_VOTE, self.node_id, self.view, signature=sig))
        self.reset_deadline()

    def on_reply_vote(self, msg: Message) -> None:
        if self.role != CANDIDATE or msg.view != self.view or msg.sender not in self.peers:
            return
        if not self._valid(msg):
            return
        self.votes.add(msg.sender)
        if len(self.votes) >= self.f + 1:
            self._become_leader()

    def _become_leader(self) -> None:
        self.role = LEADER
        self.leader_id = self.node_id
        self.port.log("leader", view=self.view)
        self._heartbeat()
        if self.outsiders:
            sig = self._sign(LEADER_ANNOUNCE, self.view, b"", self.group_id)
            self.port.broadcast(self.outsiders, Message(LEADER_ANNOUNCE, self.node_id, self.view, height=self.group_id, signature=sig))
        self.proposal = None
        self.ready_to_propose = True
        if self.on_leader:
            self.on_leader()
        self.maybe_propose()

    def _heartbeat(self) -> None:
        if self.peers:
            sig = self._sign(HEARTBEAT, self.view, b"", self.chain.height)
            self.port.broadcast(self.peers, Message(HEARTBEAT, self.node_id, self.view, height=self.chain.height, signature=sig))
        self.port.set_timer(self.now + self.heartbeat_us, "heartbeat", self.view)

    def on_heartbeat(self, msg: Message) -> None:
        if msg.view < self.view or not self._valid(msg):
            return
        self._adopt_view(msg.view)
        if self.role == CANDIDATE:
            self.role = FOLLOWER
        self._set_leader(msg.sender)
        self.reset_deadline()

    def _set_leader(self, leader: int) -> None:
        if self.leader_id != leader:
            self.leader_id = leader
            if self.on_leader_seen:
                self.on_leader_seen(self.group_id, leader, self.view)

    def on_leader_announce(self, msg: Message) -> None:
        if not self._valid(msg):
            return
        if self.on_leader_seen:
            self.on_leader_seen(msg.height, msg.sender, msg.view)

    # -- block proposal / confirm --------------------------------------------

    def maybe_propose(self) -> None:
        if self.role == LEADER and self.ready_to_propose and self.proposal is None:
            self.propose_block()

    def propose_block(self) -> None:
        """Drain up to the group's share of the pool into a candidate and broadcast it.

        A block this node accepted earlier but never saw committed is proposed
        again unchanged, so a value a majority may already hold is never replaced.
        """
        pb = self.pending_block
        if pb is not None and pb.height == self.chain.height + 1 and pb.records is not None:
            block = pb
            records = pb.records
        else:
            records = self.pool.drain(min(self.share, self.capacity))
            block = create_block(self.chain.tip, records, self.view, self.node_id, self.capacity)
            self.signer.hash_block(block)
        self.pending_block = block
        self.accept_view = self.view
        self.proposal = block
        self.proposal_time = self.now
        self.confirms = set()
        self.promoted = False
        self.ready_to_propose = False
        self.port.log("propose", view=self.view, height=block.height)
        sig = self._sign(BLOCK_PROPOSAL, self.view, block.block_hash, block.height)
        size = HEADER_SIZE + 128 + records_size(records)
        self.port.broadcast(
            self.peers,
            Message(BLOCK_PROPOSAL, self.node_id, self.view, block.block_hash, block.height, payload=block, signature=sig, size=size),
        )
        if self.f + 1 > len(self.peers):
            self._promote()

    def on_block_proposal(self, msg: Message) -> None:
        if msg.view < self.view:
            return
        if msg.view == self.view and self.leader_id is not None and msg.sender != self.leader_id:
            self.port.count_invalid()
            return
        if msg.view == self.view and self.role == LEADER:
            return
        if not self._valid(msg):
            return
        block: Block = msg.payload
        if block is None or block.block_hash != msg.block_hash or not self.signer.check_block(block):
            self.port.count_invalid()
            self.port.log("verify_fail", kind=msg.kind, view=msg.view)
            return
        self._adopt_view(msg.view)
        self.role = FOLLOWER
        self._set_leader(msg.sender)
        if block.height > self.chain.height + 1:
            self._early_proposal = msg
            return
        if block.height != self.chain.height + 1:
            return
        self.pending_block = block
        self.accept_view = self.view
        sig = self._sign(BLOCK_CONFIRM, self.view, block.block_hash, block.height)
        self.port.send(msg.sender, Message(BLOCK_CONFIRM, self.node_id, self.view, block.block_hash, block.height, signature=sig))
        self.reset_deadline()

    def on_block_confirm(self, msg: Message) -> None:
        if self.role != LEADER or self.proposal is None or msg.view != self.view:
            return
        if msg.block_hash != self.proposal.block_hash or msg.sender not in self.peers:
            return
        if not self._valid(msg):
            return
        self.confirms.add(msg.sender)
        if len(self.confirms) >= self.f + 1 and not self.promoted:
            self._promote()

    def _promote(self) -> None:
        self.promoted = True
        self.port.log("promote", view=self.view, height=self.proposal.height)
        if self.on_promote:
            self.on_promote(self.proposal, self.proposal_time)

    # -- commit dissemination ----------------------------------------------

    def after_commit(self, block: Block) -> None:
        """Leader side: tell followers about a committed block, then start the next candidate."""
        self._clear_pending()
        if self.role != LEADER:
            return
        notice = block.header_only()
        sig = self._sign(COMMIT_NOTICE, self.view, block.block_hash, block.height)
        self.port.broadcast(
            self.peers,
            Message(COMMIT_NOTICE, self.node_id, self.view, block.block_hash, block.height, payload=notice, signature=sig, size=HEADER_SIZE + 256),
        )
        self.proposal = None
        self.ready_to_propose = True
        self.maybe_propose()

    def on_commit_notice(self, msg: Message) -> None:
        if not self._valid(msg):
            return
        block: Block = msg.payload
        if block.height <= self.chain.height:
            return
        self._notice_buffer[block.height] = block
        while self.chain.height + 1 in self._notice_buffer:
            nxt = self._notice_buffer.pop(self.chain.height + 1)
            try:
                self.chain.append(nxt)
            except ForkError:
                self.port.log("fork", height=nxt.height)
                break
            except LedgerError:
                self.port.count_invalid()
                break
            self.port.commit(nxt.height, nxt.block_hash, nxt.view, -1, nxt.record_count)
            self._clear_pending()
        early = self._early_proposal
        if early is not None and early.height <= self.chain.height + 1:
            self._early_proposal = None
            if early.height == self.chain.height + 1 and early.view >= self.view:
                self.on_block_proposal(early)

    def _clear_pending(self) -> None:
        if self.pending_block is not None and self.pending_block.height <= self.chain.height:
            self.pending_block = None
            self.accept_view = -1
