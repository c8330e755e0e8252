"""Pairing-group backends.

Two implementations of the same bilinear-group surface:

* :class:`Bls12381Backend` -- BLS12-381 (128-bit security). Group arithmetic and
  pairings come from ``py_arkworks_bls12381``; hash-to-G1 is the RFC 9380
  ``BLS12381G1_XMD:SHA-256_SSWU_RO_`` suite from ``blspy``.
* :class:`ToyBackend` -- an arithmetic-only stand-in over the prime field
  Z_q with q = 2**61 - 1. G1 = G2 = GT = (Z_q, +) with generator 1 and
  e(a, b) = a*b mod q. The map is bilinear and non-degenerate but offers no
  security at all; it exists so large simulations are not pairing-bound.

Every backend exposes the same methods; group elements are opaque to callers
and travel as bytes (compressed canonical encodings).
"""
from __future__ import annotations

import hashlib
from typing import Any, Sequence

from .errors import InvalidEncoding

SIG_DST = b"WRBFT-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_"


class Bls12381Backend:
    name = "bls12_381"
    order = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
    g1_size = 48
    g2_size = 96

    def __init__(self) -> None:
        import blspy
        from py_arkworks_bls12381 import GT, G1Point, G2Point, Scalar

        self._blspy = blspy
        self._G1, self._G2, self._GT, self._Scalar = G1Point, G2Point, GT, Scalar
        self.g1 = G1Point()
        self.g2 = G2Point()

    def _scalar(self, k: int):
        return self._Scalar(k % self.order)

    def hash_to_g1(self, msg: bytes, dst: bytes = SIG_DST):
        raw = bytes(self._blspy.G1Element.from_message(msg, dst))
        return self._G1.from_compressed_bytes_unchecked(raw)

    def g1_identity(self):
        return self._G1.identity()

    def g2_identity(self):
        return self._G2.identity()

    def mul(self, point, k: int):
        return point * self._scalar(k)

    def add(self, a, b):
        return a + b

    def neg(self, a):
        return -a

    def g1_lincomb(self, points: Sequence[Any], scalars: Sequence[int]):
        return self._G1.multiexp_unchecked(list(points), [self._scalar(s) for s in scalars])

    def g2_lincomb(self, points: Sequence[Any], scalars: Sequence[int]):
        return self._G2.multiexp_unchecked(list(points), [self._scalar(s) for s in scalars])

    def pairing_eq(self, a1, b2, c1, d2) -> bool:
        """e(a1, b2) == e(c1, d2)."""
        GT = self._GT
        return GT.multi_pairing([a1, -c1], [b2, d2]) == GT.one()

    def encode_g1(self, p) -> bytes:
        return bytes(p.to_compressed_bytes())

    def encode_g2(self, p) -> bytes:
        return bytes(p.to_compressed_bytes())

    def decode_g1(self, data: bytes):
        if len(data) != self.g1_size:
            raise InvalidEncoding(f"G1 element must be {self.g1_size} bytes, got {len(data)}")
        try:
            return self._G1.from_compressed_bytes(bytes(data))
        except ValueError as exc:
            raise InvalidEncoding(str(exc)) from None

    def decode_g2(self, data: bytes):
        if len(data) != self.g2_size:
            raise InvalidEncoding(f"G2 element must be {self.g2_size} bytes, got {len(data)}")
        try:
            return self._G2.from_compressed_bytes(bytes(data))
        except ValueError as exc:
            raise InvalidEncoding(str(exc)) from None


class ToyBackend:
    name = "toy"
    order = (1 << 61) - 1
    g1_size = 8
    g2_size = 8
    g1 = 1
    g2 = 1

    def hash_to_g1(self, msg: bytes, dst: bytes = SIG_DST) -> int:
        counter = 0
        while True:
            digest = hashlib.sha256(dst + counter.to_bytes(1, "big") + msg).digest()
            value = int.from_bytes(digest, "big") % self.order
            if value:
                return value
            counter += 1

    def g1_identity(self) -> int:
        return 0

    def g2_identity(self) -> int:
        return 0

    def mul(self, point: int, k: int) -> int:
        return point * k % self.order

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.order

    def neg(self, a: int) -> int:
        return -a % self.order

    def g1_lincomb(self, points: Sequence[int], scalars: Sequence[int]) -> int:
        return sum(p * s for p, s in zip(points, scalars)) % self.order

    g2_lincomb = g1_lincomb

    def pairing_eq(self, a1: int, b2: int, c1: int, d2: int) -> bool:
        q = self.order
        return a1 * b2 % q == c1 * d2 % q

    def encode_g1(self, p: int) -> bytes:
        return p.to_bytes(8, "big")

    encode_g2 = encode_g1

    def decode_g1(self, data: bytes) -> int:
        if len(data) != 8:
            raise InvalidEncoding(f"toy group element must be 8 bytes, got {len(data)}")
        value = int.from_bytes(data, "big")
        if value >= self.order:
            raise InvalidEncoding("toy group element out of range")
        return value

    decode_g2 = decode_g1


_BACKENDS: dict[str, Any] = {}


def get_backend(name: str = "bls12_381"):
    """Return the shared (stateless) backend instance registered under ``name``."""
    if name not in _BACKENDS:
        if name == "bls12_381":
            _BACKENDS[name] = Bls12381Backend()
        elif name == "toy":
            _BACKENDS[name] = ToyBackend()
        else:
            raise ValueError(f"unknown pairing backend {name!r}; expected 'bls12_381' or 'toy'")
    return _BACKENDS[name]
