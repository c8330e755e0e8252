"""Per-node signing facade: wraps the crypto module and charges simulated CPU cost."""
from __future__ import annotations

from typing import Iterable

from . import crypto
from .crypto import AggregateSignature, InvalidEncoding, Signature
from .ledger import Block, check_block_hash, records_size
from .messages import Credential
from .simnet import CostModel


class KeyRing:
    """Public keys of every consortium node plus a cache of aggregate keys."""

    def __init__(self, backend, public_keys: dict[int, bytes]):
        self.backend = crypto.get_backend(backend) if isinstance(backend, str) else backend
        self.public_keys = dict(public_keys)
        self._agg_cache: dict[tuple[int, ...], bytes] = {}

    def aggregate_key(self, signers: tuple[int, ...]) -> bytes:
        key = self._agg_cache.get(signers)
        if key is None:
            key = crypto.aggregate_public_key([self.public_keys[i] for i in signers], self.backend)
            self._agg_cache[signers] = key
        return key

    def verify_certificate(self, message: bytes, agg: AggregateSignature) -> bool:
        if any(i not in self.public_keys for i in agg.signer_set) or list(agg.signer_set) != sorted(agg.signer_set):
            return False
        try:
            return crypto.verify_aggregate(message, self.aggregate_key(agg.signer_set), agg, self.backend)
        except (InvalidEncoding, crypto.DuplicateKeyError, crypto.ArityError):
            return False


def make_keyring(node_ids: Iterable[int], backend="toy", seed: int = 0) -> tuple[KeyRing, dict[int, int]]:
    secrets, publics = {}, {}
    for i in node_ids:
        kp = crypto.keygen(f"{seed}:{i}".encode(), backend)
        secrets[i], publics[i] = kp.secret_key, kp.public_key
    return KeyRing(backend, publics), secrets


class Signer:
    """Crypto operations performed by one node; costs go to ``owner.port``."""

    def __init__(self, node_id: int, secret_key: int, keyring: KeyRing, costs: CostModel, owner=None):
        self.node_id = node_id
        self.secret_key = secret_key
        self.keyring = keyring
        self.backend = keyring.backend
        self.costs = costs
        self.owner = owner
        self._vrf_cache: dict[bytes, crypto.VrfOutput] = {}

    def _charge(self, us: float, hashes: int = 0) -> None:
        port = self.owner.port if self.owner is not None else None
        if port is not None:
            port.charge(us)
            if hashes:
                port.count_hashes(hashes)

    def sign(self, data: bytes) -> bytes:
        self._charge(self.costs.sign, 1)
        return crypto.sign(data, self.secret_key, self.backend).value

    def verify(self, sender: int, data: bytes, sig: bytes) -> bool:
        self._charge(self.costs.verify, 1)
        pk = self.keyring.public_keys.get(sender)
        if pk is None:
            return False
        try:
            return crypto.verify(data, pk, Signature(sig), self.backend)
        except InvalidEncoding:
            return False

    def aggregate(self, sigs: dict[int, bytes]) -> AggregateSignature:
        signers = tuple(sorted(sigs))
        self._charge(self.costs.aggregate_per_signer * len(signers), len(signers))
        agg, _ = crypto.aggregate(
            [Signature(sigs[i]) for i in signers],
            [self.keyring.public_keys[i] for i in signers],
            signers,
            self.backend,
        )
        return agg

    def verify_aggregate(self, data: bytes, agg: AggregateSignature) -> bool:
        self._charge(self.costs.verify_aggregate + self.costs.aggregate_per_signer * len(agg.signer_set), 1 + len(agg.signer_set))
        return self.keyring.verify_certificate(data, agg)

    def credential(self, view: int, retry: int, seed: bytes) -> Credential:
        out = self._vrf_cache.get(seed)
        if out is None:
            self._charge(self.costs.vrf_prove, 4)
            out = crypto.vrf_prove(self.secret_key, seed, self.backend)
            self._vrf_cache[seed] = out
        return Credential(self.node_id, view, retry, out.xi, out.pi)

    def verify_leader(self, cred: Credential, seed: bytes, epsilon) -> bool:
        """VRF proof valid AND the output clears the eligibility threshold."""
        self._charge(self.costs.vrf_verify, 4)
        pk = self.keyring.public_keys.get(cred.node_id)
        if pk is None:
            return False
        try:
            ok = crypto.vrf_verify(pk, seed, cred.xi, cred.pi, self.backend)
        except InvalidEncoding:
            return False
        return ok and crypto.leader_eligible(cred.xi, epsilon)

    def eligible(self, cred: Credential, epsilon) -> bool:
        self._charge(0, 1)
        return crypto.leader_eligible(cred.xi, epsilon)

    def check_block(self, block: Block) -> bool:
        nbytes = records_size(block.records) if block.records else 0
        self._charge(self.costs.hash_per_kb * (nbytes + 128) / 1024, 2)
        return check_block_hash(block)

    def hash_block(self, block: Block) -> None:
        """Charge for hashing a freshly built block."""
        nbytes = records_size(block.records) if block.records else 0
        self._charge(self.costs.hash_per_kb * (nbytes + 128) / 1024, 2)
