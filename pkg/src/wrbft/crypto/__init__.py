"""Pairing-based signatures, coefficient-weighted aggregation and a VRF."""
from .backends import Bls12381Backend, ToyBackend, get_backend
from .bls import (
    HASH_BITS,
    AggregateSignature,
    KeyPair,
    Signature,
    aggregate,
    aggregate_public_key,
    compute_coefficients,
    hash_to_scalar,
    keygen,
    public_key_of,
    sign,
    verify,
    verify_aggregate,
)
from .errors import ArityError, CryptoError, DomainError, DuplicateKeyError, InvalidEncoding
from .vrf import (
    VrfOutput,
    derive_seed,
    eligibility_threshold,
    leader_eligible,
    proof_size,
    retry_seed,
    vrf_prove,
    vrf_verify,
    xi_rank,
)

__all__ = [
    "HASH_BITS",
    "AggregateSignature",
    "ArityError",
    "Bls12381Backend",
    "CryptoError",
    "DomainError",
    "DuplicateKeyError",
    "InvalidEncoding",
    "KeyPair",
    "Signature",
    "ToyBackend",
    "VrfOutput",
    "aggregate",
    "aggregate_public_key",
    "compute_coefficients",
    "derive_seed",
    "eligibility_threshold",
    "get_backend",
    "hash_to_scalar",
    "keygen",
    "leader_eligible",
    "proof_size",
    "public_key_of",
    "retry_seed",
    "sign",
    "verify",
    "verify_aggregate",
    "vrf_prove",
    "vrf_verify",
    "xi_rank",
]
