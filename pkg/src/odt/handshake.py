"""A TLS 1.3 shaped mini-handshake.

Only the fields the token scheme touches are kept with their real geometry:
32-byte hello randoms, 32-byte X25519 key shares, a placeholder certificate,
a Finished MAC per side and RFC 6520 heartbeats. Every frame is

    type (1 byte) || length (3 bytes, big-endian) || body
"""
from __future__ import annotations

import hmac
import hashlib
from dataclasses import dataclass
from enum import IntEnum

import nacl.bindings as sodium
import nacl.exceptions

from .group import default_rng
from .primitives import hash256, hkdf_derive, hkdf_expand, hkdf_extract

HEADER_SIZE = 4
MAX_FRAME_BODY = (1 << 24) - 1
MAX_HEARTBEAT_PAYLOAD = 2048
HEARTBEAT_PADDING = 16
ODT_TOKEN_SIZE = 128
CERT_PLACEHOLDER = b"odt placeholder certificate".ljust(64, b"\x00")


class FrameType(IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERT = 3
    FINISHED = 4
    HEARTBEAT = 24


class HeartbeatType(IntEnum):
    REQUEST = 1
    RESPONSE = 2


class MalformedFrame(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DegenerateShare(ValueError):
    """The Diffie-Hellman output is all zeros (low-order peer share)."""


class MacMismatch(ValueError):
    """Finished MAC does not match the local transcript."""


def encode_frame(ftype: int, body: bytes) -> bytes:
    if len(body) > MAX_FRAME_BODY:
        raise ValueError("frame body too large")
    return bytes([ftype]) + len(body).to_bytes(3, "big") + body


def decode_frame(data: bytes, offset: int = 0) -> tuple[FrameType, bytes, int]:
    """Parse one frame at ``offset``; return (type, body, next offset)."""
    if len(data) - offset < HEADER_SIZE:
        raise MalformedFrame("truncated frame header", len(data))
    try:
        ftype = FrameType(data[offset])
    except ValueError:
        raise MalformedFrame(f"unknown frame type {data[offset]}", offset) from None
    length = int.from_bytes(data[offset + 1 : offset + 4], "big")
    end = offset + HEADER_SIZE + length
    if end > len(data):
        raise MalformedFrame("truncated frame body", len(data))
    return ftype, bytes(data[offset + HEADER_SIZE : end]), end


class FrameBuffer:
    """Accumulates stream bytes and yields complete frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[FrameType, bytes]]:
        self._buf += data
        frames, offset = [], 0
        while len(self._buf) - offset >= HEADER_SIZE:
            length = int.from_bytes(self._buf[offset + 1 : offset + 4], "big")
            if len(self._buf) - offset < HEADER_SIZE + length:
                break
            ftype, body, offset = decode_frame(self._buf, offset)
            frames.append((ftype, body))
        del self._buf[:offset]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class Hello:
    random: bytes
    key_share: bytes
    frame_type = FrameType.CLIENT_HELLO

    def __post_init__(self):
        if len(self.random) != 32 or len(self.key_share) != 32:
            raise ValueError("hello random and key share are 32 bytes each")

    def encode(self) -> bytes:
        return encode_frame(self.frame_type, self.random + self.key_share)

    @classmethod
    def decode_body(cls, body: bytes):
        if len(body) != 64:
            raise MalformedFrame("hello body must be 64 bytes", HEADER_SIZE + min(len(body), 64))
        return cls(body[:32], body[32:])

    @classmethod
    def decode(cls, data: bytes):
        ftype, body, end = decode_frame(data)
        if ftype != cls.frame_type:
            raise MalformedFrame(f"expected {cls.frame_type.name}", 0)
        if end != len(data):
            raise MalformedFrame("trailing bytes", end)
        return cls.decode_body(body)


class ClientHello(Hello):
    frame_type = FrameType.CLIENT_HELLO


class ServerHello(Hello):
    frame_type = FrameType.SERVER_HELLO


@dataclass(frozen=True)
class Finished:
    mac: bytes

    def encode(self) -> bytes:
        return encode_frame(FrameType.FINISHED, self.mac)

    @classmethod
    def decode_body(cls, body: bytes) -> "Finished":
        if len(body) != 32:
            raise MalformedFrame("finished body must be 32 bytes", HEADER_SIZE + min(len(body), 32))
        return cls(body)

    @classmethod
    def decode(cls, data: bytes) -> "Finished":
        ftype, body, end = decode_frame(data)
        if ftype != FrameType.FINISHED or end != len(data):
            raise MalformedFrame("expected a single FINISHED frame", 0)
        return cls.decode_body(body)


@dataclass(frozen=True)
class HeartbeatMessage:
    hb_type: int
    payload: bytes
    padding: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_HEARTBEAT_PAYLOAD:
            raise ValueError(f"heartbeat payload exceeds {MAX_HEARTBEAT_PAYLOAD} bytes")
        if len(self.padding) < HEARTBEAT_PADDING:
            raise ValueError(f"heartbeat padding must be >= {HEARTBEAT_PADDING} bytes")
        body = (
            bytes([self.hb_type])
            + len(self.payload).to_bytes(2, "big")
            + self.payload
            + self.padding
        )
        return encode_frame(FrameType.HEARTBEAT, body)

    @classmethod
    def decode_body(cls, body: bytes) -> "HeartbeatMessage":
        at = HEADER_SIZE
        if len(body) < 3:
            raise MalformedFrame("truncated heartbeat header", at + len(body))
        if body[0] not in (HeartbeatType.REQUEST, HeartbeatType.RESPONSE):
            raise MalformedFrame(f"unknown heartbeat type {body[0]}", at)
        length = int.from_bytes(body[1:3], "big")
        if length > MAX_HEARTBEAT_PAYLOAD:
            raise MalformedFrame(f"heartbeat payload length {length} > 2048", at + 1)
        if len(body) < 3 + length + HEARTBEAT_PADDING:
            raise MalformedFrame("heartbeat payload or padding truncated", at + len(body))
        return cls(body[0], body[3 : 3 + length], body[3 + length :])

    @classmethod
    def decode(cls, data: bytes) -> "HeartbeatMessage":
        ftype, body, end = decode_frame(data)
        if ftype != FrameType.HEARTBEAT or end != len(data):
            raise MalformedFrame("expected a single HEARTBEAT frame", 0)
        return cls.decode_body(body)

    @classmethod
    def request(cls, payload: bytes, rng=None) -> "HeartbeatMessage":
        return cls(HeartbeatType.REQUEST, payload, _random_bytes(rng, HEARTBEAT_PADDING))

    def response(self, rng=None) -> "HeartbeatMessage":
        return HeartbeatMessage(
            HeartbeatType.RESPONSE, self.payload, _random_bytes(rng, HEARTBEAT_PADDING)
        )


@dataclass(frozen=True)
class ODTToken:
    y: bytes
    z: bytes
    sigma: bytes

    def __post_init__(self):
        if (len(self.y), len(self.z), len(self.sigma)) != (32, 32, 64):
            raise ValueError("token fields are 32, 32 and 64 bytes")

    def to_bytes(self) -> bytes:
        return self.y + self.z + self.sigma

    @classmethod
    def from_bytes(cls, data: bytes) -> "ODTToken":
        if len(data) != ODT_TOKEN_SIZE:
            raise MalformedFrame(f"token must be {ODT_TOKEN_SIZE} bytes", min(len(data), ODT_TOKEN_SIZE))
        return cls(data[:32], data[32:64], data[64:])


def _random_bytes(rng, n: int) -> bytes:
    return default_rng(rng).getrandbits(8 * n).to_bytes(n, "little")


# --- key exchange and schedule ----------------------------------------------

def dh_keygen(rng=None) -> tuple[bytes, bytes]:
    x = _random_bytes(rng, 32)
    return x, sodium.crypto_scalarmult_base(x)


def dh_shared(x: bytes, peer: bytes) -> bytes:
    if len(peer) != 32:
        raise ValueError("X25519 shares are 32 bytes")
    try:
        hs = sodium.crypto_scalarmult(x, peer)
    except nacl.exceptions.RuntimeError:
        raise DegenerateShare("all-zero shared secret") from None
    if hs == bytes(32):
        raise DegenerateShare("all-zero shared secret")
    return hs


@dataclass(frozen=True)
class SessionSecrets:
    hs: bytes
    k: bytes
    transcript_hash: bytes


def derive_secrets(hs: bytes, hello_transcript: bytes) -> SessionSecrets:
    return SessionSecrets(hs, hkdf_derive(hs), hash256(hello_transcript))


def finished_key(hs: bytes) -> bytes:
    return hkdf_expand(hkdf_extract(bytes(32), hs), b"odt finished", 32)


def finished_mac(secrets: SessionSecrets, transcript: bytes) -> bytes:
    return hmac.new(finished_key(secrets.hs), hash256(transcript), hashlib.sha256).digest()


def check_finished(secrets: SessionSecrets, transcript: bytes, mac: bytes) -> None:
    if not hmac.compare_digest(finished_mac(secrets, transcript), mac):
        raise MacMismatch("Finished MAC mismatch")
