class CryptoError(Exception):
    """Base class for crypto-layer failures."""


class InvalidEncoding(CryptoError, ValueError):
    """Bytes do not decode to a valid group element or structure."""


class DuplicateKeyError(CryptoError, ValueError):
    """The same public key appears twice in a coefficient key list."""


class ArityError(CryptoError, ValueError):
    """Signature and public-key lists differ in length (or are empty)."""


class DomainError(CryptoError, ValueError):
    """An argument lies outside its documented domain."""
