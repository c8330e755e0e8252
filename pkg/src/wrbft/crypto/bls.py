"""BLS signatures with hash-derived aggregation coefficients.

Signatures live in G1 and public keys in G2 (pk = sk*g2), so a signature on
``m`` checks as e(sig, g2) == e(H(m), pk).  Aggregation weights every
constituent by alpha_i = H(pk_i || pk_1 || ... || pk_n) mod r, which is what
defeats the rogue-key attack against plain summation.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

from .backends import get_backend
from .errors import ArityError, DuplicateKeyError, InvalidEncoding

HASH_BITS = 256

_KEYGEN_TAG = b"WRBFT-KEYGEN"
_COEFF_TAG = b"WRBFT-COEFF"


def _resolve(backend):
    return get_backend(backend) if isinstance(backend, str) else backend


def hash_to_scalar(data: bytes, order: int, tag: bytes = b"") -> int:
    """SHA-256 reduced mod ``order``; zero is rejected by re-hashing with a counter."""
    counter = 0
    while True:
        digest = hashlib.sha256(tag + struct.pack(">I", counter) + data).digest()
        value = int.from_bytes(digest, "big") % order
        if value:
            return value
        counter += 1


@dataclass(frozen=True)
class KeyPair:
    secret_key: int
    public_key: bytes


@dataclass(frozen=True)
class Signature:
    value: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">H", len(self.value)) + self.value

    @classmethod
    def from_bytes(cls, data: bytes) -> Signature:
        if len(data) < 2:
            raise InvalidEncoding("truncated signature")
        (n,) = struct.unpack_from(">H", data)
        if len(data) != 2 + n:
            raise InvalidEncoding("signature length prefix mismatch")
        return cls(bytes(data[2:]))


@dataclass(frozen=True)
class AggregateSignature:
    value: bytes
    signer_set: tuple[int, ...]

    def to_bytes(self) -> bytes:
        """``u16 len | value | u16 count | count * u32 node id``."""
        out = [struct.pack(">H", len(self.value)), self.value, struct.pack(">H", len(self.signer_set))]
        out.extend(struct.pack(">I", i) for i in self.signer_set)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> AggregateSignature:
        try:
            (n,) = struct.unpack_from(">H", data, 0)
            value = bytes(data[2 : 2 + n])
            if len(value) != n:
                raise InvalidEncoding("truncated aggregate signature")
            (count,) = struct.unpack_from(">H", data, 2 + n)
            ids = struct.unpack_from(f">{count}I", data, 4 + n)
        except struct.error as exc:
            raise InvalidEncoding(str(exc)) from None
        if len(data) != 4 + n + 4 * count:
            raise InvalidEncoding("aggregate signature has trailing bytes")
        return cls(value, tuple(ids))


def keygen(rng_seed: int | bytes, backend="bls12_381") -> KeyPair:
    """Deterministic key generation: sk = H(seed) mod r (nonzero), pk = sk*g2."""
    be = _resolve(backend)
    seed = rng_seed if isinstance(rng_seed, bytes) else str(int(rng_seed)).encode()
    sk = hash_to_scalar(seed, be.order, _KEYGEN_TAG)
    return KeyPair(sk, be.encode_g2(be.mul(be.g2, sk)))


def public_key_of(sk: int, backend="bls12_381") -> bytes:
    be = _resolve(backend)
    return be.encode_g2(be.mul(be.g2, sk))


def sign(message: bytes, sk: int, backend="bls12_381") -> Signature:
    if not message:
        raise ValueError("cannot sign an empty message")
    be = _resolve(backend)
    return Signature(be.encode_g1(be.mul(be.hash_to_g1(message), sk)))


def verify(message: bytes, pk: bytes, sig: Signature, backend="bls12_381") -> bool:
    """Pairing check e(sig, g2) == e(H(m), pk). Malformed encodings raise InvalidEncoding."""
    be = _resolve(backend)
    pk_point = be.decode_g2(pk)
    sig_point = be.decode_g1(sig.value)
    return be.pairing_eq(sig_point, be.g2, be.hash_to_g1(message), pk_point)


def compute_coefficients(public_keys: Sequence[bytes], backend="bls12_381") -> list[int]:
    """alpha_i = H(pk_i || pk_1 || ... || pk_n) reduced mod r, zero rejected."""
    if not public_keys:
        raise ArityError("coefficient key list is empty")
    if len(set(public_keys)) != len(public_keys):
        raise DuplicateKeyError("duplicate public key in coefficient list")
    be = _resolve(backend)
    joined = b"".join(public_keys)
    return [hash_to_scalar(pk + joined, be.order, _COEFF_TAG) for pk in public_keys]


def aggregate(
    signatures: Sequence[Signature],
    public_keys: Sequence[bytes],
    signer_ids: Sequence[int] | None = None,
    backend="bls12_381",
) -> tuple[AggregateSignature, bytes]:
    """Coefficient-weighted aggregate signature and aggregate public key.

    ``public_keys`` must already be in canonical (node-id) order; ``signer_ids``
    defaults to positional indices.
    """
    if len(signatures) != len(public_keys) or not signatures:
        raise ArityError(f"{len(signatures)} signatures vs {len(public_keys)} public keys")
    be = _resolve(backend)
    alphas = compute_coefficients(public_keys, be)
    sig_points = [be.decode_g1(s.value) for s in signatures]
    pk_points = [be.decode_g2(pk) for pk in public_keys]
    agg = be.g1_lincomb(sig_points, alphas)
    apk = be.g2_lincomb(pk_points, alphas)
    ids = tuple(signer_ids) if signer_ids is not None else tuple(range(len(signatures)))
    return AggregateSignature(be.encode_g1(agg), ids), be.encode_g2(apk)


def aggregate_public_key(public_keys: Sequence[bytes], backend="bls12_381") -> bytes:
    be = _resolve(backend)
    alphas = compute_coefficients(public_keys, be)
    return be.encode_g2(be.g2_lincomb([be.decode_g2(pk) for pk in public_keys], alphas))


def verify_aggregate(message: bytes, aggregate_pk: bytes, agg: AggregateSignature, backend="bls12_381") -> bool:
    be = _resolve(backend)
    pk_point = be.decode_g2(aggregate_pk)
    sig_point = be.decode_g1(agg.value)
    return be.pairing_eq(sig_point, be.g2, be.hash_to_g1(message), pk_point)
