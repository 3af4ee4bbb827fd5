"""Hashing, key derivation and signatures."""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from nacl.exceptions import BadSignatureError, CryptoError
from nacl.signing import SigningKey, VerifyKey

from .group import default_rng

WITNESS_KEY_INFO = b"odt witness key"


def hash256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac.new(salt or bytes(32), ikm, hashlib.sha256).digest()


def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    if length > 255 * 32:
        raise ValueError("HKDF-SHA256 output is limited to 8160 bytes")
    out, block = b"", b""
    counter = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return out[:length]


def hkdf_derive(hs: bytes, info: bytes = WITNESS_KEY_INFO) -> bytes:
    """Session key k from the raw Diffie-Hellman secret."""
    return hkdf_expand(hkdf_extract(bytes(32), hs), info, 32)


@dataclass(frozen=True)
class SigKeyPair:
    sk: bytes
    pk: bytes

    @classmethod
    def generate(cls, rng=None) -> "SigKeyPair":
        seed = default_rng(rng).getrandbits(256).to_bytes(32, "little")
        return cls.from_seed(seed)

    @classmethod
    def from_seed(cls, seed: bytes) -> "SigKeyPair":
        key = SigningKey(seed)
        return cls(sk=bytes(key), pk=bytes(key.verify_key))


def sign(sk: bytes, msg: bytes) -> bytes:
    """Ed25519 signature (64 bytes, deterministic)."""
    return SigningKey(sk).sign(msg).signature


def verify(pk: bytes, msg: bytes, sig: bytes) -> bool:
    if len(pk) != 32 or len(sig) != 64:
        return False
    try:
        VerifyKey(pk).verify(msg, sig)
    except (BadSignatureError, CryptoError, ValueError):
        return False
    return True
