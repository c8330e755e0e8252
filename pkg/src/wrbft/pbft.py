"""Flat PBFT over all N nodes (baseline).

Normal case per block: the primary broadcasts PrePrepare, every node
broadcasts Prepare, and every node that holds 2f+1 matching prepares
broadcasts Commit.  A node commits at 2f+1 matching commits.  Signatures are
individual (no aggregation).  The primary of view v is ``ids[v mod N]``.
On timeout a node broadcasts ViewChange(v+1) and moves once it sees 2f+1 of
them.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from .identity import Signer
from .ledger import Block, Chain, LedgerError, StoragePool, create_block, records_size
from .messages import (
    HEADER_SIZE,
    PBFT_COMMIT,
    PBFT_PRE_PREPARE,
    PBFT_PREPARE,
    PBFT_VIEW_CHANGE,
    Message,
    signing_bytes,
)


@dataclass
class PbftTiming:
    view_timeout_us: int = 5_000_000  # doubled after every view change without a commit


class PbftNode:
    def __init__(
        self,
        node_id: int,
        members: Sequence[int],
        signer: Signer,
        chain: Chain,
        pool: StoragePool,
        tx_per_block: int,
        capacity: int = 2000,
        timing: PbftTiming | None = None,
    ):
        self.node_id = node_id
        self.members = tuple(sorted(members))
        self.peers = tuple(m for m in self.members if m != node_id)
        self.f = (len(self.members) - 1) // 3
        self.quorum = 2 * self.f + 1
        self.signer = signer
        self.chain = chain
        self.pool = pool
        self.tx_per_block = tx_per_block
        self.capacity = capacity
        self.timing = timing or PbftTiming()

        self.port = None
        self.view = 0
        self.pending: Block | None = None
        self.pending_time = -1
        self.sent_commit = False
        self.prepares: dict[tuple[int, bytes], set[int]] = defaultdict(set)
        self.commits: dict[tuple[int, bytes], set[int]] = defaultdict(set)
        self.view_changes: dict[int, set[int]] = defaultdict(set)
        self.progress = 0
        self.backoff = 0
        self._deferred: list[Message] = []

    @property
    def now(self) -> int:
        return self.port.now

    def primary_of(self, view: int) -> int:
        return self.members[view % len(self.members)]

    def _sign(self, kind: str, view: int, block_hash: bytes = b"", height: int = 0) -> bytes:
        return self.signer.sign(signing_bytes(kind, view, block_hash, height, self.node_id))

    def _valid(self, msg: Message) -> bool:
        ok = msg.sender in self.members and self.signer.verify(
            msg.sender, signing_bytes(msg.kind, msg.view, msg.block_hash, msg.height, msg.sender), msg.signature
        )
        if not ok:
            self.port.count_invalid()
        return ok

    def _timeout(self) -> int:
        return self.timing.view_timeout_us << min(self.backoff, 8)

    def _arm_timer(self) -> None:
        self.progress += 1
        self.port.set_timer(self.now + self._timeout(), "view", (self.view, self.progress))

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._arm_timer()
        if self.primary_of(self.view) == self.node_id:
            self.propose()

    def propose(self) -> None:
        records = self.pool.drain(min(self.tx_per_block, self.capacity))
        block = create_block(self.chain.tip, records, self.view, self.node_id, self.capacity)
        self.signer.hash_block(block)
        self._accept(block, self.now)
        sig = self._sign(PBFT_PRE_PREPARE, self.view, block.block_hash, block.height)
        self.port.broadcast(
            self.peers,
            Message(PBFT_PRE_PREPARE, self.node_id, self.view, block.block_hash, block.height, payload=block, signature=sig, extra=(self.now,), size=HEADER_SIZE + 128 + records_size(records)),
        )
        self._send_prepare()

    def _accept(self, block: Block, proposal_time: int) -> None:
        self.pending = block
        self.pending_time = proposal_time
        self.sent_commit = False

    def _send_prepare(self) -> None:
        block = self.pending
        self.prepares[(self.view, block.block_hash)].add(self.node_id)
        sig = self._sign(PBFT_PREPARE, self.view, block.block_hash, block.height)
        self.port.broadcast(self.peers, Message(PBFT_PREPARE, self.node_id, self.view, block.block_hash, block.height, signature=sig))
        self._check()

    # -- normal case -------------------------------------------------------

    def on_preprepare(self, msg: Message) -> None:
        if msg.view > self.view or (msg.view == self.view and (self.pending is not None or msg.height > self.chain.height + 1)):
            self._deferred.append(msg)  # ahead of us: retry after the next commit or view change
            return
        if msg.view != self.view or msg.sender != self.primary_of(self.view) or self.pending is not None:
            return
        if not self._valid(msg):
            return
        block: Block = msg.payload
        if block is None or block.block_hash != msg.block_hash or block.height != self.chain.height + 1 or block.prev_hash != self.chain.tip.block_hash:
            return
        if not self.signer.check_block(block):
            self.port.count_invalid()
            return
        self._accept(block, msg.extra[0])
        self._arm_timer()
        self._send_prepare()

    def on_vote(self, msg: Message) -> None:
        if msg.view != self.view or msg.height <= self.chain.height:
            return
        if not self._valid(msg):
            return
        table = self.prepares if msg.kind == PBFT_PREPARE else self.commits
        table[(msg.view, msg.block_hash)].add(msg.sender)
        self._check()

    def _check(self) -> None:
        block = self.pending
        if block is None:
            return
        key = (self.view, block.block_hash)
        if not self.sent_commit and len(self.prepares[key]) >= self.quorum:
            self.sent_commit = True
            self.commits[key].add(self.node_id)
            sig = self._sign(PBFT_COMMIT, self.view, block.block_hash, block.height)
            self.port.broadcast(self.peers, Message(PBFT_COMMIT, self.node_id, self.view, block.block_hash, block.height, signature=sig))
        if self.sent_commit and len(self.commits[key]) >= self.quorum:
            self._commit(block)

    def _commit(self, block: Block) -> None:
        try:
            self.chain.append(block)
        except LedgerError as exc:
            self.port.log("append_fail", height=block.height, kind=type(exc).__name__)
            return
        self.port.commit(block.height, block.block_hash, self.view, self.pending_time, block.record_count)
        self.pending = None
        self.backoff = 0
        self.prepares = defaultdict(set, {k: v for k, v in self.prepares.items() if k[0] >= self.view and k[1] != block.block_hash})
        self.commits = defaultdict(set, {k: v for k, v in self.commits.items() if k[0] >= self.view and k[1] != block.block_hash})
        self._arm_timer()
        if self.primary_of(self.view) == self.node_id:
            self.propose()
        self._replay_deferred()

    def _replay_deferred(self) -> None:
        waiting, self._deferred = self._deferred, []
        for msg in waiting:
            if msg.view >= self.view and msg.height > self.chain.height:
                self.on_preprepare(msg)

    # -- view change -------------------------------------------------------

    def on_timer(self, name: str, data) -> None:
        if name == "view" and data == (self.view, self.progress):
            target = self.view + 1
            self.view_changes[target].add(self.node_id)
            sig = self._sign(PBFT_VIEW_CHANGE, target, b"", self.chain.height)
            self.port.broadcast(self.peers, Message(PBFT_VIEW_CHANGE, self.node_id, target, b"", self.chain.height, signature=sig))
            self._maybe_change(target)
            self.progress += 1
            self.port.set_timer(self.now + self._timeout(), "view", (self.view, self.progress))

    def on_view_change(self, msg: Message) -> None:
        if msg.view <= self.view or not self._valid(msg):
            return
        self.view_changes[msg.view].add(msg.sender)
        self._maybe_change(msg.view)

    def _maybe_change(self, target: int) -> None:
        if target <= self.view or len(self.view_changes[target]) < self.quorum:
            return
        self.view = target
        self.backoff += 1
        self.pending = None
        self.sent_commit = False
        self._arm_timer()
        if self.primary_of(target) == self.node_id:
            self.propose()
        self._replay_deferred()

    def on_message(self, msg: Message) -> None:
        if msg.kind == PBFT_PRE_PREPARE:
            self.on_preprepare(msg)
        elif msg.kind in (PBFT_PREPARE, PBFT_COMMIT):
            self.on_vote(msg)
        elif msg.kind == PBFT_VIEW_CHANGE:
            self.on_view_change(msg)
