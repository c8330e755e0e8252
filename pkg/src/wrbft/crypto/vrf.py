"""Hash-to-curve VRF and threshold leader eligibility.

prove(sk, seed):
    P     = H1(seed)                 (hash to G1)
    Gamma = sk * P
    k     = Hs(sk || seed)           deterministic nonce
    c     = Hs(pk, P, Gamma, k*P, k*g2)
    s     = k - c*sk mod r
    xi    = SHA-256(Gamma)           32 bytes
    pi    = Gamma || c || s          (G1 size + 64 bytes)

The (c, s) pair is a Chaum-Pedersen proof that log_P(Gamma) == log_g2(pk),
so verification needs no pairing.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from fractions import Fraction

from .backends import get_backend
from .bls import HASH_BITS, hash_to_scalar
from .errors import DomainError, InvalidEncoding

VRF_DST = b"WRBFT-VRF-V01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_"
XI_SIZE = 32
_SCALAR_SIZE = 32


def _resolve(backend):
    return get_backend(backend) if isinstance(backend, str) else backend


@dataclass(frozen=True)
class VrfOutput:
    xi: bytes
    pi: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">H", len(self.xi)) + self.xi + struct.pack(">H", len(self.pi)) + self.pi

    @classmethod
    def from_bytes(cls, data: bytes) -> VrfOutput:
        try:
            (n,) = struct.unpack_from(">H", data, 0)
            xi = bytes(data[2 : 2 + n])
            (m,) = struct.unpack_from(">H", data, 2 + n)
            pi = bytes(data[4 + n : 4 + n + m])
        except struct.error as exc:
            raise InvalidEncoding(str(exc)) from None
        if len(xi) != n or len(pi) != m or len(data) != 4 + n + m:
            raise InvalidEncoding("VRF output length prefix mismatch")
        return cls(xi, pi)


def proof_size(backend="bls12_381") -> int:
    return _resolve(backend).g1_size + 2 * _SCALAR_SIZE


def _challenge(be, pk: bytes, base, gamma, u, v) -> int:
    data = pk + be.encode_g1(base) + be.encode_g1(gamma) + be.encode_g1(u) + be.encode_g2(v)
    return hash_to_scalar(data, be.order, b"WRBFT-VRF-CHAL")


def vrf_prove(sk: int, seed: bytes, backend="bls12_381") -> VrfOutput:
    if not seed:
        raise ValueError("VRF seed must be nonempty")
    be = _resolve(backend)
    base = be.hash_to_g1(seed, VRF_DST)
    gamma = be.mul(base, sk)
    pk = be.encode_g2(be.mul(be.g2, sk))
    k = hash_to_scalar(sk.to_bytes(_SCALAR_SIZE, "big") + seed, be.order, b"WRBFT-VRF-NONCE")
    c = _challenge(be, pk, base, gamma, be.mul(base, k), be.mul(be.g2, k))
    s = (k - c * sk) % be.order
    gamma_bytes = be.encode_g1(gamma)
    pi = gamma_bytes + c.to_bytes(_SCALAR_SIZE, "big") + s.to_bytes(_SCALAR_SIZE, "big")
    return VrfOutput(hashlib.sha256(gamma_bytes).digest(), pi)


def vrf_verify(pk: bytes, seed: bytes, xi: bytes, pi: bytes, backend="bls12_381") -> bool:
    be = _resolve(backend)
    if len(pi) != be.g1_size + 2 * _SCALAR_SIZE:
        raise InvalidEncoding(f"VRF proof must be {be.g1_size + 2 * _SCALAR_SIZE} bytes, got {len(pi)}")
    gamma_bytes = pi[: be.g1_size]
    gamma = be.decode_g1(gamma_bytes)
    pk_point = be.decode_g2(pk)
    c = int.from_bytes(pi[be.g1_size : be.g1_size + _SCALAR_SIZE], "big")
    s = int.from_bytes(pi[be.g1_size + _SCALAR_SIZE :], "big")
    if c >= be.order or s >= be.order:
        raise InvalidEncoding("VRF proof scalar out of range")
    base = be.hash_to_g1(seed, VRF_DST)
    u = be.add(be.mul(base, s), be.mul(gamma, c))
    v = be.add(be.mul(be.g2, s), be.mul(pk_point, c))
    if _challenge(be, pk, base, gamma, u, v) != c:
        return False
    return xi == hashlib.sha256(gamma_bytes).digest()


def eligibility_threshold(epsilon: float | Fraction, hashlen: int = HASH_BITS) -> int:
    """floor(epsilon * 2**hashlen), exact for the binary value of ``epsilon``."""
    eps = Fraction(epsilon)
    if not 0 <= eps <= 1:
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    return (eps.numerator << hashlen) // eps.denominator


def xi_rank(xi: bytes) -> int:
    """H(xi) as an integer -- the quantity compared against the threshold."""
    return int.from_bytes(hashlib.sha256(xi).digest(), "big")


def leader_eligible(xi: bytes, epsilon: float | Fraction, hashlen: int = HASH_BITS) -> bool:
    if hashlen != HASH_BITS:
        raise DomainError(f"hashlen must match the configured hash output size ({HASH_BITS})")
    return xi_rank(xi) <= eligibility_threshold(epsilon, hashlen)


def derive_seed(view: int, k: int) -> bytes:
    """Canonical 8-byte big-endian encoding of ``view mod k``."""
    if k < 1:
        raise DomainError(f"group count must be >= 1, got {k}")
    if view < 0:
        raise DomainError(f"view must be non-negative, got {view}")
    return (view % k).to_bytes(8, "big")


def retry_seed(seed: bytes, retry: int) -> bytes:
    """Seed for the ``retry``-th re-election when no node was eligible."""
    if retry == 0:
        return seed
    return hashlib.sha256(seed + struct.pack(">I", retry)).digest()
