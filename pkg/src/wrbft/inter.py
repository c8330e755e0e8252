"""Aggregated-signature PBFT among the K group leaders.

Round for view v (steady state, fault-free -- 5(K-1) transmissions):

    primary  --PrePrepare(block, VRF credential)-->  leaders
    leaders  --Prepare1(sig)-->                      primary   (2f+1 incl. its own)
    primary  --PrepareAgg(aggregate)-->              leaders
    leaders  --Commit1(sig, next-view credential)--> primary
    primary  --CommitAgg(aggregate, credentials)-->  leaders   -> everyone appends

The primary of view v is the eligible claimant with the smallest H(xi) for the
seed derived from v.  Credentials for view v+1 ride on Commit1 and the primary
echoes the verified ones in CommitAgg, so every leader learns the next primary
without extra messages.  When nobody knows the primary (bootstrap, timeouts,
empty credential list) leaders broadcast NewView carrying their credential and
pending group batch; claimants wait a short window and the smallest claim wins.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable

from .crypto import AggregateSignature, derive_seed, retry_seed, xi_rank
from .identity import Signer
from .ledger import Block, Chain, LedgerError, create_block, records_size, sort_records
from .messages import (
    COMMIT1,
    COMMIT_AGG,
    GROUP_BATCH,
    HEADER_SIZE,
    NEW_VIEW,
    PRE_PREPARE,
    PREPARE1,
    PREPARE_AGG,
    SYNC_REQUEST,
    SYNC_RESPONSE,
    Credential,
    Message,
    signing_bytes,
    vote_bytes,
)

IDLE, PREPREPARED, PREPARED, COMMITTED = "Idle", "PrePrepared", "Prepared", "Committed"


def byzantine_budget(k: int) -> int:
    """f = floor((K - 1) / 3)."""
    return (k - 1) // 3


@dataclass
class InterTiming:
    view_timeout_us: int = 1_500_000
    claim_window_us: int = 60_000
    batch_wait_us: int = 400_000


class InterNode:
    def __init__(
        self,
        node_id: int,
        group_id: int,
        k: int,
        group_of: dict[int, int],
        signer: Signer,
        chain: Chain,
        epsilon: float,
        timing: InterTiming | None = None,
        capacity: int = 2000,
    ):
        self.node_id = node_id
        self.group_id = group_id
        self.k = k
        self.group_of = group_of
        self.signer = signer
        self.chain = chain
        self.epsilon = epsilon
        self.timing = timing or InterTiming()
        self.capacity = capacity
        self.f = byzantine_budget(k)
        self.quorum = 2 * self.f + 1

        self.port = None
        self.active = False
        self.directory: dict[int, int] = {}
        self._dir_term: dict[int, int] = {}
        self.view = 0
        self.retry = 0
        self.phase = IDLE
        self.is_leader = False
        self.primary: int | None = None
        self.primary_rank: int | None = None
        self.leader_proof: Credential | None = None
        self.election_mode = True
        self.claims: dict[int, tuple[int, Credential]] = {}
        self.batches: dict[int, tuple[tuple, int]] = {}
        self.my_batch: tuple[tuple, int] | None = None
        self.newview_sent_with_batch = False
        self.newview_sent = False
        self.pending_block: Block | None = None
        self.pending_time = -1
        self.prepare1_set: dict[int, bytes] = {}
        self.commit1_set: dict[int, bytes] = {}
        self.next_claims: dict[int, Credential] = {}
        self.progress = 0
        self.phase_deadline = 0
        self._batch_timer_armed = False
        self._nv_votes: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._nv_store: dict[tuple[int, int], dict[int, Message]] = defaultdict(dict)
        self._future: dict[int, list[Message]] = defaultdict(list)
        self._early_agg: dict[int, Message] = {}
        self._sync_asked: set[int] = set()
        # highest prepared block for the next height, with its PrepareAgg as proof
        self.lock: tuple[Block, AggregateSignature] | None = None

        self.on_commit: Callable[[Block, tuple], None] | None = None

    # -- helpers -----------------------------------------------------------

    @property
    def now(self) -> int:
        return self.port.now

    def peers(self) -> list[int]:
        return sorted(v for g, v in self.directory.items() if v != self.node_id)

    def seed_for(self, view: int, retry: int) -> bytes:
        return retry_seed(derive_seed(view, self.k), retry)

    def own_credential(self, view: int, retry: int) -> Credential | None:
        cred = self.signer.credential(view, retry, self.seed_for(view, retry))
        return cred if self.signer.eligible(cred, self.epsilon) else None

    def _valid(self, msg: Message, data: bytes) -> bool:
        ok = msg.sender in self.group_of and self.signer.verify(msg.sender, data, msg.signature)
        if not ok:
            self.port.count_invalid()
        return ok

    def _sender_bytes(self, msg: Message) -> bytes:
        return signing_bytes(msg.kind, msg.view, msg.block_hash, msg.height, msg.sender)

    def _quorum_ok(self, signers: tuple[int, ...]) -> bool:
        groups = {self.group_of.get(s) for s in signers}
        return len(signers) >= self.quorum and None not in groups and len(groups) == len(signers)

    def _arm_view_timer(self) -> None:
        self.progress += 1
        self.phase_deadline = self.now + self.timing.view_timeout_us
        self.port.set_timer(self.phase_deadline, "view", (self.view, self.retry, self.progress))

    def _reset_view_state(self, view: int, retry: int) -> None:
        self.view, self.retry = view, retry
        self.phase = IDLE
        self.is_leader = False
        self.primary = None
        self.primary_rank = None
        self.leader_proof = None
        self.claims = {}
        self.batches = {}
        self.pending_block = None
        self.pending_time = -1
        self.prepare1_set = {}
        self.commit1_set = {}
        self.next_claims = {}
        self.newview_sent = False
        self.newview_sent_with_batch = False
        self._batch_timer_armed = False
        self._early_agg = {v: m for v, m in self._early_agg.items() if v >= view}
        for key in [k for k in self._nv_store if k < (view, retry)]:
            del self._nv_store[key]
            self._nv_votes.pop(key, None)

    # -- membership --------------------------------------------------------

    def update_directory(self, group: int, leader: int, term: int) -> None:
        if term < self._dir_term.get(group, -1):
            return
        known = self.directory.get(group)
        self.directory[group] = leader
        self._dir_term[group] = term
        if known != leader and self.active and self.election_mode and self.newview_sent and leader != self.node_id:
            self.port.send(leader, self._newview_message())

    def activate(self) -> None:
        self.active = True
        self.update_directory(self.group_id, self.node_id, 1 << 30)
        joinable = [k for k, voters in self._nv_votes.items() if k > (self.view, self.retry) and len(voters) >= self.f + 1]
        if joinable:
            self.enter_election(*max(joinable))  # other leaders moved on while we were a follower
            return
        self._arm_view_timer()
        if self.election_mode and self.my_batch is not None:
            self._send_newview()

    def deactivate(self) -> None:
        self.active = False
        self.my_batch = None
        self._dir_term[self.group_id] = -1

    # -- leader election ---------------------------------------------------

    def run_leader_election(self) -> Credential | None:
        """Compute this node's credential for the current (view, retry); claim if eligible."""
        cred = self.own_credential(self.view, self.retry)
        if cred is not None:
            self.claims[self.node_id] = (xi_rank(cred.xi), cred)
            self.leader_proof = cred
        return cred

    def verify_leader(self, cred: Credential, view: int, retry: int) -> bool:
        return cred.view == view and cred.retry == retry and self.signer.verify_leader(cred, self.seed_for(view, retry), self.epsilon)

    def enter_election(self, view: int, retry: int) -> None:
        self._reset_view_state(view, retry)
        self.election_mode = True
        self._sync_asked.clear()
        self.port.log("election", view=view, height=retry)
        self.run_leader_election()
        for msg in list(self._nv_store.get((view, retry), {}).values()):
            self._absorb_newview(msg)
        self._send_newview()
        self._arm_view_timer()

    trigger_view_change = enter_election

    def _newview_message(self) -> Message:
        cred = self.claims.get(self.node_id, (0, None))[1]
        records = self.my_batch[0] if self.my_batch else None
        ptime = self.my_batch[1] if self.my_batch else -1
        lock = self.lock if self.lock is not None and self.lock[0].height == self.chain.height + 1 else None
        size = HEADER_SIZE + (cred.size if cred else 0) + (records_size(records) if records else 0)
        if lock is not None:
            size += 256 + records_size(lock[0].records)
        sig = self.signer.sign(signing_bytes(NEW_VIEW, self.view, b"", self.retry, self.node_id))
        return Message(NEW_VIEW, self.node_id, self.view, b"", self.retry, payload=records, signature=sig, credential=cred, extra=(self.retry, ptime, lock), size=size)

    def _send_newview(self) -> None:
        if not self.active:
            return
        if self.node_id not in self.claims:
            self.run_leader_election()
        self.newview_sent = True
        self.newview_sent_with_batch = self.my_batch is not None
        if self.my_batch is not None:
            self.batches[self.group_id] = self.my_batch
        self.port.broadcast(self.peers(), self._newview_message())
        if self.node_id in self.claims:
            self.port.set_timer(self.now + self.timing.claim_window_us, "claim", (self.view, self.retry))

    def on_new_view(self, msg: Message) -> None:
        key = (msg.view, msg.extra[0])
        if key < (self.view, self.retry):
            return
        if not self._valid(msg, signing_bytes(NEW_VIEW, msg.view, b"", msg.height, msg.sender)):
            return
        self._nv_store[key][msg.sender] = msg
        self._nv_votes[key].add(msg.sender)
        if not self.active:
            return
        if key == (self.view, self.retry):
            self._absorb_newview(msg)
        elif len(self._nv_votes[key]) >= self.f + 1:
            self.enter_election(*key)

    def _absorb_newview(self, msg: Message) -> None:
        if msg.credential is not None and msg.sender not in self.claims:
            if msg.credential.node_id == msg.sender and self.verify_leader(msg.credential, self.view, self.retry):
                rank = xi_rank(msg.credential.xi)
                self.claims[msg.sender] = (rank, msg.credential)
                if self.primary == self.node_id and self.phase == IDLE and (rank, msg.sender) < (self.primary_rank, self.node_id):
                    # nothing signed yet for this view: step aside for the better claim
                    self.primary, self.primary_rank = msg.sender, rank
                    self.is_leader = False
                    self._batch_timer_armed = False
            else:
                self.port.count_invalid()
        if len(msg.extra) > 2 and msg.extra[2] is not None:
            self._consider_lock(*msg.extra[2])
        if msg.payload is not None and self.phase == IDLE:
            self.batches[self.group_of[msg.sender]] = (tuple(msg.payload), msg.extra[1])
            if self.primary == self.node_id:
                self.maybe_preprepare()

    def _consider_lock(self, block: Block, agg: AggregateSignature) -> None:
        """Adopt a reported prepared block if it is for the next height and newer than ours."""
        if block.height != self.chain.height + 1 or block.records is None:
            return
        if self.lock is not None and self.lock[0].height == block.height and self.lock[0].view >= block.view:
            return
        if not self._quorum_ok(agg.signer_set) or not self.signer.check_block(block):
            self.port.count_invalid()
            return
        if not self.signer.verify_aggregate(vote_bytes(PREPARE1, block.view, block.block_hash, block.height), agg):
            self.port.count_invalid()
            return
        self.lock = (block, agg)

    def on_claim_timer(self, key) -> None:
        if key != (self.view, self.retry) or not self.active or not self.election_mode or self.primary is not None:
            return
        mine = self.claims.get(self.node_id)
        if mine is None:
            return
        heard = self._nv_votes[key] | {self.node_id}
        if len(heard) < self.quorum or len(self.directory) < self.quorum:
            # too few leaders have announced; a better claim may still be in flight
            self.port.set_timer(self.now + self.timing.claim_window_us, "claim", key)
            return
        best = min(self.claims.items(), key=lambda kv: (kv[1][0], kv[0]))
        if best[0] != self.node_id:
            self.primary, self.primary_rank = best[0], best[1][0]
            return
        self.primary, self.primary_rank = self.node_id, mine[0]
        self.is_leader = True
        self.election_mode = False
        self.maybe_preprepare()

    # -- batches and pre-prepare -------------------------------------------

    def submit_batch(self, records, proposal_time: int) -> None:
        """Group candidate promoted by intra-group consensus."""
        self.my_batch = (tuple(records), proposal_time)
        if not self.active:
            return
        if self.election_mode:
            if not self.newview_sent_with_batch and (self.newview_sent or self.view == 0):
                self._send_newview()
            return
        if self.primary == self.node_id:
            if self.phase == IDLE:
                self.batches[self.group_id] = self.my_batch
                self.maybe_preprepare()
        elif self.primary is not None:
            size = HEADER_SIZE + records_size(self.my_batch[0])
            sig = self.signer.sign(signing_bytes(GROUP_BATCH, self.view, b"", self.chain.height + 1, self.node_id))
            self.port.send(
                self.primary,
                Message(GROUP_BATCH, self.node_id, self.view, b"", self.chain.height + 1, payload=self.my_batch[0], signature=sig, extra=(proposal_time,), size=size),
            )

    def on_group_batch(self, msg: Message) -> None:
        if msg.view > self.view:
            self._future[msg.view].append(msg)
            return
        if msg.view < self.view or self.primary != self.node_id or self.phase != IDLE:
            return
        if not self._valid(msg, self._sender_bytes(msg)):
            return
        self.batches[self.group_of[msg.sender]] = (tuple(msg.payload), msg.extra[0])
        self.maybe_preprepare()

    def maybe_preprepare(self) -> None:
        if not self.active or self.primary != self.node_id or self.phase != IDLE:
            return
        if self.my_batch is not None and self.group_id not in self.batches:
            self.batches[self.group_id] = self.my_batch
        if self.group_id not in self.batches:
            return
        if len(self.batches) >= max(len(self.directory), 1):
            self.preprepare()
        elif not self._batch_timer_armed:
            self._batch_timer_armed = True
            self.port.set_timer(self.now + self.timing.batch_wait_us, "batch", (self.view, self.retry))

    def on_batch_timer(self, key) -> None:
        if key == (self.view, self.retry) and self.primary == self.node_id and self.phase == IDLE and self.group_id in self.batches:
            self.preprepare()

    def preprepare(self) -> None:
        if self.lock is not None and self.lock[0].height == self.chain.height + 1:
            records = list(self.lock[0].records)  # re-propose what may already be committed somewhere
        else:
            records = sort_records(r for recs, _ in self.batches.values() for r in recs)[: self.capacity]
        times = [t for _, t in self.batches.values() if t >= 0]
        block = create_block(self.chain.tip, records, self.view, self.node_id, self.capacity)
        self.signer.hash_block(block)
        cred = self.claims[self.node_id][1] if self.node_id in self.claims else self.run_leader_election()
        self.pending_block = block
        self.pending_time = min(times) if times else self.now
        self.phase = PREPREPARED
        self.is_leader = True
        self.election_mode = False
        self.port.log("preprepare", view=self.view, height=block.height)
        sig = self.signer.sign(signing_bytes(PRE_PREPARE, self.view, block.block_hash, block.height, self.node_id))
        size = HEADER_SIZE + 128 + cred.size + records_size(records)
        self.port.broadcast(
            self.peers(),
            Message(PRE_PREPARE, self.node_id, self.view, block.block_hash, block.height, payload=block, signature=sig, credential=cred, extra=(self.retry, self.pending_time), size=size),
        )
        self.prepare1_set[self.node_id] = self.signer.sign(vote_bytes(PREPARE1, self.view, block.block_hash, block.height))
        self._arm_view_timer()
        self._check_prepare_quorum()

    def on_preprepare(self, msg: Message) -> None:
        if not self.active:
            return
        retry = msg.extra[0]
        if (msg.view, retry) < (self.view, self.retry):
            return
        if not self._valid(msg, self._sender_bytes(msg)):
            return
        cred = msg.credential
        if cred is None or cred.node_id != msg.sender or not self.verify_leader(cred, msg.view, retry):
            self.port.count_invalid()
            self.port.log("bad_leader", view=msg.view)
            return
        rank = xi_rank(cred.xi)
        if (msg.view, retry) > (self.view, self.retry):
            self._reset_view_state(msg.view, retry)
            self.election_mode = False
            self._arm_view_timer()
        if self.phase != IDLE:
            return
        smaller = [n for n, (r, _) in self.claims.items() if r < rank and n != msg.sender]
        if smaller or (self.primary not in (None, msg.sender) and self.primary_rank is not None and self.primary_rank < rank):
            return
        block: Block = msg.payload
        if block is None or block.block_hash != msg.block_hash:
            self.port.count_invalid()
            return
        if block.height > self.chain.height + 1:
            self._request_sync(msg.sender)
            return
        if block.height != self.chain.height + 1 or block.prev_hash != self.chain.tip.block_hash:
            return
        if self.lock is not None and self.lock[0].height == block.height and self.lock[0].records_digest != block.records_digest:
            self.port.log("locked", view=msg.view, height=block.height)
            return
        if not self.signer.check_block(block):
            self.port.count_invalid()
            return
        self.primary, self.primary_rank = msg.sender, rank
        self.election_mode = False
        self.pending_block = block
        self.pending_time = msg.extra[1]
        self.phase = PREPREPARED
        sig = self.signer.sign(vote_bytes(PREPARE1, self.view, block.block_hash, block.height))
        self.port.send(msg.sender, Message(PREPARE1, self.node_id, self.view, block.block_hash, block.height, signature=sig))
        self._arm_view_timer()
        early = self._early_agg.pop(self.view, None)
        if early is not None:
            self.on_aggregate(early)

    # -- prepare / commit --------------------------------------------------

    def on_individual_sig(self, msg: Message) -> None:
        """Primary side of Prepare1 / Commit1."""
        if not self.active or self.primary != self.node_id or msg.view != self.view or self.pending_block is None:
            return
        block = self.pending_block
        if msg.block_hash != block.block_hash or msg.height != block.height:
            return
        target = self.prepare1_set if msg.kind == PREPARE1 else self.commit1_set
        if msg.sender in target:
            return
        group = self.group_of.get(msg.sender)
        if group is None or any(self.group_of[s] == group for s in target):
            return
        if not self._valid(msg, vote_bytes(msg.kind, msg.view, msg.block_hash, msg.height)):
            return
        target[msg.sender] = msg.signature
        if msg.kind == PREPARE1:
            self._check_prepare_quorum()
        else:
            cred = msg.credential
            if cred is not None and cred.node_id == msg.sender and self.verify_leader(cred, self.view + 1, 0):
                self.next_claims[msg.sender] = cred
            self._check_commit_quorum()

    def _check_prepare_quorum(self) -> None:
        if self.phase != PREPREPARED or len(self.prepare1_set) < self.quorum:
            return
        block = self.pending_block
        agg = self.signer.aggregate(self.prepare1_set)
        self.phase = PREPARED
        self.lock = (block, agg)
        self.port.broadcast(
            self.peers(),
            Message(PREPARE_AGG, self.node_id, self.view, block.block_hash, block.height, aggregate=agg, size=HEADER_SIZE + len(agg.value) + 4 * len(agg.signer_set)),
        )
        self.commit1_set[self.node_id] = self.signer.sign(vote_bytes(COMMIT1, self.view, block.block_hash, block.height))
        own = self.own_credential(self.view + 1, 0)
        if own is not None:
            self.next_claims[self.node_id] = own
        self._arm_view_timer()
        self._check_commit_quorum()

    def _check_commit_quorum(self) -> None:
        if self.phase != PREPARED or len(self.commit1_set) < self.quorum:
            return
        block = self.pending_block
        agg = self.signer.aggregate(self.commit1_set)
        creds = tuple(sorted(self.next_claims.values(), key=lambda c: (xi_rank(c.xi), c.node_id)))
        size = HEADER_SIZE + len(agg.value) + 4 * len(agg.signer_set) + sum(c.size for c in creds)
        self.port.broadcast(
            self.peers(),
            Message(COMMIT_AGG, self.node_id, self.view, block.block_hash, block.height, aggregate=agg, extra=creds, size=size),
        )
        self._commit(block.with_certificate(agg), self.view, creds)

    def on_aggregate(self, msg: Message) -> None:
        if not self.active:
            return
        agg = msg.aggregate
        if agg is None or not self._quorum_ok(agg.signer_set):
            self.port.count_invalid()
            return
        if msg.kind == PREPARE_AGG:
            if (msg.view, self.phase) == (self.view, IDLE) or msg.view > self.view:
                self._early_agg[msg.view] = msg  # overtook the bulkier PrePrepare
                return
            if msg.view != self.view or self.phase != PREPREPARED or self.pending_block is None:
                return
            block = self.pending_block
            if msg.block_hash != block.block_hash or msg.height != block.height:
                return
            if not self.signer.verify_aggregate(vote_bytes(PREPARE1, msg.view, msg.block_hash, msg.height), agg):
                self.port.count_invalid()
                return
            self.phase = PREPARED
            self.lock = (block, agg)
            sig = self.signer.sign(vote_bytes(COMMIT1, self.view, block.block_hash, block.height))
            cred = self.own_credential(self.view + 1, 0)
            self.port.send(
                msg.sender,
                Message(COMMIT1, self.node_id, self.view, block.block_hash, block.height, signature=sig, credential=cred, size=HEADER_SIZE + (cred.size if cred else 0)),
            )
            self._arm_view_timer()
            return
        # CommitAgg: a valid certificate finalizes the block even for a lagging node
        if msg.height <= self.chain.height:
            return
        if not self.signer.verify_aggregate(vote_bytes(COMMIT1, msg.view, msg.block_hash, msg.height), agg):
            self.port.count_invalid()
            return
        creds = tuple(c for c in msg.extra if self.verify_leader(c, msg.view + 1, 0))
        block = self.pending_block
        if block is not None and block.block_hash == msg.block_hash and block.height == self.chain.height + 1:
            self._commit(block.with_certificate(agg), msg.view, creds)
        else:
            if msg.view + 1 > self.view:
                self._reset_view_state(msg.view + 1, 0)
                self._adopt_next_primary(creds)
            self._request_sync(msg.sender)

    def _commit(self, block: Block, view: int, creds) -> None:
        try:
            self.chain.append(block)
        except LedgerError as exc:
            self.port.log("append_fail", view=view, height=block.height, kind=type(exc).__name__)
            return
        self.phase = COMMITTED
        signers = block.commit_certificate.signer_set if block.commit_certificate else ()
        self.port.commit(block.height, block.block_hash, view, self.pending_time, block.record_count, signers)
        leftover = self._leftover(block)
        self._reset_view_state(view + 1, 0)
        self._adopt_next_primary(creds)
        if self.on_commit:
            self.on_commit(block, leftover)

    def _leftover(self, block: Block) -> tuple:
        """Records of our own batch that ``block`` did not include; clears the batch and stale lock."""
        if self.lock is not None and self.lock[0].height <= block.height:
            self.lock = None
        if self.my_batch is None:
            return ()
        inside = set(block.records or ())
        left = tuple(r for r in self.my_batch[0] if r not in inside)
        self.my_batch = None
        return left

    def _adopt_next_primary(self, creds) -> None:
        if self.active:
            self._arm_view_timer()
        if not creds:
            if self.active:
                self.enter_election(self.view, 0)
            return
        best = min(creds, key=lambda c: (xi_rank(c.xi), c.node_id))
        self.primary, self.primary_rank = best.node_id, xi_rank(best.xi)
        self.election_mode = False
        self.is_leader = self.primary == self.node_id
        if self.is_leader:
            self.leader_proof = best
            self.claims[self.node_id] = (self.primary_rank, best)
        for msg in self._future.pop(self.view, []):
            self.on_group_batch(msg)
        for v in [v for v in self._future if v < self.view]:
            del self._future[v]

    # -- timers ------------------------------------------------------------

    def _leaders_at_or_beyond(self, key: tuple[int, int]) -> set[int]:
        out = {self.node_id}
        for k, voters in self._nv_votes.items():
            if k >= key:
                out |= voters
        return out

    def on_view_timer(self, token) -> None:
        if token != (self.view, self.retry, self.progress) or not self.active:
            return
        if self.election_mode and len(self._leaders_at_or_beyond((self.view, self.retry))) < self.quorum:
            # too few leaders have reached this election: repeat the announcement and
            # wait for them rather than running ahead where nobody can follow
            self.port.broadcast(self.peers(), self._newview_message())
            self._arm_view_timer()
            return
        if self.election_mode and not self.claims and self.primary is None:
            self.enter_election(self.view, self.retry + 1)
        else:
            self.enter_election(self.view + 1, 0)

    # -- catch-up ----------------------------------------------------------

    def _request_sync(self, peer: int) -> None:
        want = self.chain.height + 1
        if want in self._sync_asked:
            return
        self._sync_asked.add(want)
        sig = self.signer.sign(signing_bytes(SYNC_REQUEST, self.view, b"", want, self.node_id))
        self.port.send(peer, Message(SYNC_REQUEST, self.node_id, self.view, b"", want, signature=sig))

    def on_sync_request(self, msg: Message) -> None:
        if not self._valid(msg, self._sender_bytes(msg)):
            return
        blocks = tuple(self.chain.blocks[msg.height : msg.height + 32])
        if not blocks:
            return
        size = HEADER_SIZE + sum(256 + (records_size(b.records) if b.records else 0) for b in blocks)
        self.port.send(msg.sender, Message(SYNC_RESPONSE, self.node_id, self.view, b"", msg.height, payload=blocks, size=size))

    def on_sync_response(self, msg: Message) -> None:
        for block in msg.payload:
            if block.height != self.chain.height + 1:
                continue
            if block.commit_certificate is None or not self._quorum_ok(block.commit_certificate.signer_set):
                return
            if not self.signer.verify_aggregate(vote_bytes(COMMIT1, block.view, block.block_hash, block.height), block.commit_certificate):
                return
            try:
                self.chain.append(block)
            except LedgerError:
                return
            self.port.commit(block.height, block.block_hash, block.view, -1, block.record_count, block.commit_certificate.signer_set)
            if self.pending_block is not None and self.pending_block.height <= block.height:
                self.pending_block = None
                self.phase = IDLE
            leftover = self._leftover(block)
            if self.on_commit:
                self.on_commit(block, leftover)
        self._sync_asked = {h for h in self._sync_asked if h > self.chain.height}

    # -- dispatch ----------------------------------------------------------

    def on_message(self, msg: Message) -> None:
        kind = msg.kind
        if kind == PRE_PREPARE:
            self.on_preprepare(msg)
        elif kind in (PREPARE1, COMMIT1):
            self.on_individual_sig(msg)
        elif kind in (PREPARE_AGG, COMMIT_AGG):
            self.on_aggregate(msg)
        elif kind == NEW_VIEW:
            self.on_new_view(msg)
        elif kind == GROUP_BATCH:
            self.on_group_batch(msg)
        elif kind == SYNC_REQUEST:
            self.on_sync_request(msg)
        elif kind == SYNC_RESPONSE:
            self.on_sync_response(msg)

    def on_timer(self, name: str, data) -> None:
        if name == "view":
            self.on_view_timer(data)
        elif name == "claim":
            self.on_claim_timer(data)
        elif name == "batch":
            self.on_batch_timer(data)
