"""Byzantine sender transforms, applied by the simulator to outbound messages.

Adversarial nodes run the honest state machine; what they put on the wire is
rewritten here.  Only inter-group traffic is touched: inside a group the
adversary behaves (it needs to stay group leader to reach the BFT layer).
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import replace
from typing import Callable

from . import crypto
from .ledger import Block, VehicleDataRecord, create_block, records_size
from .messages import (
    COMMIT1,
    HEADER_SIZE,
    INTER_KINDS,
    PBFT_KINDS,
    PBFT_PRE_PREPARE,
    PBFT_PREPARE,
    PBFT_COMMIT,
    PRE_PREPARE,
    PREPARE1,
    Message,
    signing_bytes,
    vote_bytes,
)
from .simnet import BAD_SIGNATURE, EQUIVOCATE, REPLAY_OLD_VIEW, SILENT, FaultPlan

TAMPERED_KINDS = INTER_KINDS | PBFT_KINDS
_VOTE_KINDS = (PREPARE1, COMMIT1, PBFT_PREPARE, PBFT_COMMIT)


def conflicting_block(block: Block, marker: bytes) -> Block:
    """A block at the same height and parent whose content differs from ``block``."""
    records = list(block.records or ())
    if records:
        records = records[:-1]
    else:
        records = [VehicleDataRecord("equivocation", marker, 0)]
    parent = Block(block.height - 1, b"", 0, 0, 0, b"", block.prev_hash)
    return create_block(parent, records, block.view, block.proposer_id, max(len(records), 1))


class Tamperer:
    """Callable plugged into :class:`~wrbft.simnet.Simulator` as ``tamper``.

    ``secrets`` maps adversarial node ids to secret keys so that rewritten
    messages still carry valid signatures where the behaviour calls for it.
    """

    def __init__(self, plan: FaultPlan, secrets: dict[int, int], backend, seed: int = 0):
        self.plan = plan
        self.secrets = secrets
        self.backend = crypto.get_backend(backend) if isinstance(backend, str) else backend
        self.rng = random.Random(f"byzantine:{seed}")
        self._history: dict[tuple[int, str], list[Message]] = {}

    def _sign(self, node: int, data: bytes) -> bytes:
        return crypto.sign(data, self.secrets[node], self.backend).value

    def __call__(self, sender: int, recipients: tuple[int, ...], msg: Message, now: int) -> list[tuple[int, Message]]:
        behavior = self.plan.behavior(sender, now)
        if behavior is None or msg.kind not in TAMPERED_KINDS:
            return [(r, msg) for r in recipients]
        if behavior == SILENT:
            return []
        if behavior == BAD_SIGNATURE:
            return [(r, self._garble(msg)) for r in recipients]
        if behavior == EQUIVOCATE:
            return self._equivocate(sender, recipients, msg)
        if behavior == REPLAY_OLD_VIEW:
            return [(r, self._replay(sender, msg)) for r in recipients]
        raise ValueError(f"unknown behavior {behavior!r}")

    def _garble(self, msg: Message) -> Message:
        changes = {}
        if msg.signature:
            changes["signature"] = self.rng.randbytes(len(msg.signature))
        if msg.aggregate is not None:
            agg = msg.aggregate
            changes["aggregate"] = replace(agg, value=self.rng.randbytes(len(agg.value)))
        return replace(msg, **changes) if changes else msg

    def _equivocate(self, sender: int, recipients: tuple[int, ...], msg: Message) -> list[tuple[int, Message]]:
        if msg.kind in (PRE_PREPARE, PBFT_PRE_PREPARE) and isinstance(msg.payload, Block):
            ordered = sorted(recipients)
            half = len(ordered) // 2
            alt_block = conflicting_block(msg.payload, msg.block_hash)
            alt = replace(
                msg,
                block_hash=alt_block.block_hash,
                payload=alt_block,
                signature=self._sign(sender, signing_bytes(msg.kind, msg.view, alt_block.block_hash, msg.height, sender)),
                size=HEADER_SIZE + 128 + (msg.credential.size if msg.credential else 0) + records_size(alt_block.records),
            )
            return [(r, msg) for r in ordered[:half]] + [(r, alt) for r in ordered[half:]]
        if msg.kind in _VOTE_KINDS:
            wrong = hashlib.sha256(b"equivocate" + msg.block_hash).digest()
            if msg.kind in (PREPARE1, COMMIT1):
                data = vote_bytes(msg.kind, msg.view, wrong, msg.height)
            else:
                data = signing_bytes(msg.kind, msg.view, wrong, msg.height, sender)
            alt = replace(msg, block_hash=wrong, signature=self._sign(sender, data))
            return [(r, alt) for r in recipients]
        return [(r, msg) for r in recipients]

    def _replay(self, sender: int, msg: Message) -> Message:
        key = (sender, msg.kind)
        past = self._history.setdefault(key, [])
        older = [m for m in past if m.view < msg.view]
        if not any(m.view == msg.view and m.height == msg.height for m in past):
            past.append(msg)
            del past[:-8]
        return older[-1] if older else msg


def make_tamperer(plan: FaultPlan, secrets: dict[int, int], backend, seed: int = 0) -> Callable | None:
    if not plan.byzantine:
        return None
    return Tamperer(plan, {n: secrets[n] for n in plan.byzantine}, backend, seed)


__all__ = ["Tamperer", "make_tamperer", "conflicting_block", "TAMPERED_KINDS"]
