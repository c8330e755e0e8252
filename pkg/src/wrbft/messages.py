"""Protocol messages shared by every state machine, plus their signed byte forms."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any

from .crypto import AggregateSignature

# intra-group (weighted Raft)
REQUEST_VOTE = "RequestVote"
REPLY_VOTE = "ReplyVote"
BLOCK_PROPOSAL = "BlockProposal"
BLOCK_CONFIRM = "BlockConfirm"
HEARTBEAT = "Heartbeat"
COMMIT_NOTICE = "CommitNotice"
LEADER_ANNOUNCE = "LeaderAnnounce"

# inter-group (aggregated PBFT among group leaders)
PRE_PREPARE = "PrePrepare"
PREPARE1 = "Prepare1"
PREPARE_AGG = "PrepareAgg"
COMMIT1 = "Commit1"
COMMIT_AGG = "CommitAgg"
NEW_VIEW = "NewView"
GROUP_BATCH = "GroupBatch"
SYNC_REQUEST = "SyncRequest"
SYNC_RESPONSE = "SyncResponse"

# flat PBFT baseline
PBFT_PRE_PREPARE = "PbftPrePrepare"
PBFT_PREPARE = "PbftPrepare"
PBFT_COMMIT = "PbftCommit"
PBFT_VIEW_CHANGE = "PbftViewChange"

INTRA_KINDS = frozenset({REQUEST_VOTE, REPLY_VOTE, BLOCK_PROPOSAL, BLOCK_CONFIRM, HEARTBEAT, COMMIT_NOTICE, LEADER_ANNOUNCE})
INTER_KINDS = frozenset({PRE_PREPARE, PREPARE1, PREPARE_AGG, COMMIT1, COMMIT_AGG, NEW_VIEW, GROUP_BATCH, SYNC_REQUEST, SYNC_RESPONSE})
INTER_ROUND_KINDS = (PRE_PREPARE, PREPARE1, PREPARE_AGG, COMMIT1, COMMIT_AGG)
PBFT_KINDS = frozenset({PBFT_PRE_PREPARE, PBFT_PREPARE, PBFT_COMMIT, PBFT_VIEW_CHANGE})

_KIND_CODES = {
    k: i
    for i, k in enumerate(
        [
            REQUEST_VOTE, REPLY_VOTE, BLOCK_PROPOSAL, BLOCK_CONFIRM, HEARTBEAT, COMMIT_NOTICE, LEADER_ANNOUNCE,
            PRE_PREPARE, PREPARE1, PREPARE_AGG, COMMIT1, COMMIT_AGG, NEW_VIEW, GROUP_BATCH, SYNC_REQUEST,
            SYNC_RESPONSE, PBFT_PRE_PREPARE, PBFT_PREPARE, PBFT_COMMIT, PBFT_VIEW_CHANGE,
        ]
    )
}

HEADER_SIZE = 64  # fixed envelope overhead used for bandwidth accounting


@dataclass(frozen=True)
class Credential:
    """A VRF leadership claim for (view, retry)."""

    node_id: int
    view: int
    retry: int
    xi: bytes
    pi: bytes

    @property
    def size(self) -> int:
        return 16 + len(self.xi) + len(self.pi)


@dataclass(frozen=True, slots=True)
class Message:
    kind: str
    sender: int
    view: int
    block_hash: bytes = b""
    height: int = 0
    payload: Any = None
    signature: bytes = b""
    aggregate: AggregateSignature | None = None
    credential: Credential | None = None
    extra: tuple = field(default=())
    size: int = HEADER_SIZE


def signing_bytes(kind: str, view: int, block_hash: bytes = b"", height: int = 0, sender: int | None = None) -> bytes:
    """Bytes covered by a signature.

    Quorum votes (Prepare1/Commit1) omit the sender so every signer signs the
    same message and the signatures aggregate; everything else binds the sender.
    """
    who = 0xFFFFFFFF if sender is None else sender
    return struct.pack(">BQQI", _KIND_CODES[kind], view, height, who) + block_hash


def vote_bytes(kind: str, view: int, block_hash: bytes, height: int) -> bytes:
    return signing_bytes(kind, view, block_hash, height, None)


def commit_certificate_bytes(block) -> bytes:
    return vote_bytes(COMMIT1, block.view, block.block_hash, block.height)
