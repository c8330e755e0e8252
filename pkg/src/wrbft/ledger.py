"""Vehicle-data records, blocks, storage pools and the append-only chain.

Canonical byte layout (all integers big-endian):

    record  = u16 len(vehicle_id) | vehicle_id utf-8 | u32 len(payload) | payload
              | u64 submit_timestamp | u16 len(signature) | signature
    header  = b"WRBFT-BLK1" | u64 height | 32B prev_hash | u64 view | u32 proposer
              | u32 record_count | 32B records_digest
    records_digest = SHA-256(record_0 | record_1 | ...)
    block_hash     = SHA-256(header)

Because the header commits to the records digest, a block can be relayed and
appended header-only (``records=None``) while its hash stays checkable.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .crypto import AggregateSignature

ZERO_HASH = bytes(32)
DEFAULT_BLOCK_CAPACITY = 2000
DEFAULT_MAX_PAYLOAD = 4096
_HEADER_TAG = b"WRBFT-BLK1"


class LedgerError(Exception):
    pass


class CapacityError(LedgerError, ValueError):
    pass


class ForkError(LedgerError):
    pass


class IntegrityError(LedgerError):
    pass


class CertificateError(LedgerError):
    pass


@dataclass(frozen=True)
class VehicleDataRecord:
    vehicle_id: str
    payload: bytes
    submit_timestamp: int
    signature: bytes = b""
    encoded: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.payload) > DEFAULT_MAX_PAYLOAD:
            raise CapacityError(f"payload of {len(self.payload)} bytes exceeds {DEFAULT_MAX_PAYLOAD}")
        vid = self.vehicle_id.encode()
        blob = b"".join(
            (
                struct.pack(">H", len(vid)),
                vid,
                struct.pack(">I", len(self.payload)),
                self.payload,
                struct.pack(">QH", self.submit_timestamp, len(self.signature)),
                self.signature,
            )
        )
        object.__setattr__(self, "encoded", blob)


def records_digest(records: Sequence[VehicleDataRecord]) -> bytes:
    return hashlib.sha256(b"".join(r.encoded for r in records)).digest()


def records_size(records: Sequence[VehicleDataRecord]) -> int:
    return sum(len(r.encoded) for r in records)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    view: int
    proposer_id: int
    record_count: int
    records_digest: bytes
    block_hash: bytes
    records: tuple[VehicleDataRecord, ...] | None = None
    commit_certificate: AggregateSignature | None = None

    @property
    def is_empty(self) -> bool:
        """True for a ``data = ⊥`` block."""
        return self.record_count == 0

    def header_bytes(self) -> bytes:
        return header_bytes(self.height, self.prev_hash, self.view, self.proposer_id, self.record_count, self.records_digest)

    def header_only(self) -> Block:
        return replace(self, records=None)

    def with_certificate(self, cert: AggregateSignature) -> Block:
        return replace(self, commit_certificate=cert)

    def to_json(self) -> dict:
        out = {
            "height": self.height,
            "hash": self.block_hash.hex(),
            "prev_hash": self.prev_hash.hex(),
            "view": self.view,
            "proposer": self.proposer_id,
            "record_count": self.record_count,
            "records_digest": self.records_digest.hex(),
        }
        if self.commit_certificate is not None:
            out["certificate"] = {
                "signature": self.commit_certificate.value.hex(),
                "signers": list(self.commit_certificate.signer_set),
            }
        return out


def header_bytes(height: int, prev_hash: bytes, view: int, proposer: int, count: int, digest: bytes) -> bytes:
    return _HEADER_TAG + struct.pack(">Q", height) + prev_hash + struct.pack(">QII", view, proposer, count) + digest


def create_block(
    parent: Block | None,
    records: Sequence[VehicleDataRecord],
    view: int,
    proposer: int,
    capacity: int = DEFAULT_BLOCK_CAPACITY,
) -> Block:
    """Build the next block on ``parent`` (genesis when ``parent`` is None)."""
    if len(records) > capacity:
        raise CapacityError(f"{len(records)} records exceed block capacity {capacity}")
    height = 0 if parent is None else parent.height + 1
    prev = ZERO_HASH if parent is None else parent.block_hash
    digest = records_digest(records)
    h = hashlib.sha256(header_bytes(height, prev, view, proposer, len(records), digest)).digest()
    return Block(height, prev, view, proposer, len(records), digest, h, tuple(records))


def check_block_hash(block: Block) -> bool:
    """Recompute the hash (and the records digest, if records are attached)."""
    if block.records is not None:
        if len(block.records) != block.record_count or records_digest(block.records) != block.records_digest:
            return False
    return hashlib.sha256(block.header_bytes()).digest() == block.block_hash


class CertificateCheck:
    """Verifies commit certificates: enough distinct signers and a valid aggregate.

    ``message_for(block)`` returns the bytes every signer signed.
    """

    def __init__(
        self,
        quorum: int,
        verify: Callable[[bytes, AggregateSignature], bool],
        message_for: Callable[[Block], bytes],
        domain_of: Callable[[int], object] | None = None,
    ):
        self.quorum = quorum
        self._verify = verify
        self._message_for = message_for
        self._domain_of = domain_of  # e.g. node -> group: signers must come from distinct domains

    def __call__(self, block: Block) -> None:
        cert = block.commit_certificate
        if cert is None:
            return
        signers = cert.signer_set
        if len(set(signers)) != len(signers) or len(signers) < self.quorum:
            raise CertificateError(f"certificate has {len(set(signers))} distinct signers, needs {self.quorum}")
        if self._domain_of is not None and len({self._domain_of(i) for i in signers}) != len(signers):
            raise CertificateError("certificate signers are not from distinct groups")
        if not self._verify(self._message_for(block), cert):
            raise CertificateError("certificate aggregate signature does not verify")


class Chain:
    """Append-only chain owned by one node. Genesis is created on construction."""

    def __init__(self, genesis: Block | None = None, certificate_check: CertificateCheck | None = None):
        self.blocks: list[Block] = [genesis or create_block(None, (), 0, 0)]
        self.certificate_check = certificate_check

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def hashes(self) -> list[bytes]:
        return [b.block_hash for b in self.blocks]

    def append(self, block: Block) -> None:
        if block.prev_hash != self.tip.block_hash or block.height != self.tip.height + 1:
            raise ForkError(f"block {block.height} does not extend tip {self.tip.height}")
        if not check_block_hash(block):
            raise IntegrityError(f"block {block.height} hash does not recompute")
        if self.certificate_check is not None:
            self.certificate_check(block)
        self.blocks.append(block)

    def export_ndjson(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for block in self.blocks:
                fh.write(json.dumps(block.to_json(), sort_keys=True) + "\n")


def validate_and_append(chain: Chain, block: Block) -> Chain:
    chain.append(block)
    return chain


class StoragePool:
    """FIFO of pending records with a count trigger and a timeout trigger.

    ``source`` (optional) is called with the number of missing records to keep
    the pool topped up; it models a saturated vehicle workload.
    """

    def __init__(
        self,
        capacity_trigger: int = DEFAULT_BLOCK_CAPACITY,
        timeout_trigger: int = 1_000_000,
        source: Callable[[int], Iterable[VehicleDataRecord]] | None = None,
    ):
        self.queue: deque[VehicleDataRecord] = deque()
        self.capacity_trigger = capacity_trigger
        self.timeout_trigger = timeout_trigger
        self.source = source

    def __len__(self) -> int:
        return len(self.queue)

    def submit(self, record: VehicleDataRecord) -> None:
        self.queue.append(record)

    def ready(self, oldest_wait: int) -> bool:
        return len(self.queue) >= self.capacity_trigger or (bool(self.queue) and oldest_wait >= self.timeout_trigger)

    def drain(self, limit: int) -> list[VehicleDataRecord]:
        if self.source is not None and len(self.queue) < limit:
            self.queue.extend(self.source(limit - len(self.queue)))
        n = min(limit, len(self.queue))
        return [self.queue.popleft() for _ in range(n)]

    def restore(self, records: Sequence[VehicleDataRecord]) -> None:
        """Put undelivered records back at the head, preserving their order."""
        self.queue.extendleft(reversed(records))


def sort_records(records: Iterable[VehicleDataRecord]) -> list[VehicleDataRecord]:
    return sorted(records, key=lambda r: (r.submit_timestamp, r.vehicle_id, r.encoded))
