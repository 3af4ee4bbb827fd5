"""Elligator 2 over Curve25519 and the edwards25519 glue around it.

Points of the prime-order group travel as 32-byte compressed edwards25519
encodings. Uniform strings are produced by pushing a point into a random coset
of the full curve (adding one of the eight low-order points), mapping the
result to its Montgomery form and taking the Elligator 2 representative. The
two spare high bits are filled with fresh randomness. Decoding strips those
bits, runs the forward map and projects back onto the prime-order subgroup,
which discards the low-order component again.
"""
from __future__ import annotations

import gmpy2
import nacl.bindings as sodium

Q = 2**255 - 19
A = 486662
L = 2**252 + 27742317777372353535851937790883648493
D = -121665 * pow(121666, -1, Q) % Q
NON_SQUARE = 2
SQRT_M1 = pow(2, (Q - 1) // 4, Q)
HALF_Q = (Q - 1) // 2
REPR_MASK = (1 << 254) - 1

IDENTITY = (1).to_bytes(32, "little")


def inv(x: int) -> int:
    return int(gmpy2.invert(x % Q, Q))


def fpow(x: int, e: int) -> int:
    return int(gmpy2.powmod(x, e, Q))


class NotEncodable(ValueError):
    """The point has no Elligator 2 representative."""


def is_negative(x: int) -> bool:
    return x % Q > HALF_Q


def is_square(x: int) -> bool:
    x %= Q
    return x == 0 or fpow(x, HALF_Q) == 1


def sqrt(x: int) -> int:
    """Non-negative square root modulo Q; raises ValueError for non-squares."""
    x %= Q
    root = fpow(x, (Q + 3) // 8)
    if root * root % Q != x:
        root = root * SQRT_M1 % Q
    if root * root % Q != x:
        raise ValueError("not a square")
    return Q - root if root > HALF_Q else root


# Birational map scale factor between edwards25519 and Curve25519.
SQRT_MINUS_A_PLUS_2 = sqrt(-(A + 2))


# --- edwards25519, affine, reference speed ------------------------------------

def ed_add(p: tuple[int, int], q: tuple[int, int]) -> tuple[int, int]:
    (x1, y1), (x2, y2) = p, q
    t = D * x1 * x2 * y1 * y2 % Q
    x3 = (x1 * y2 + y1 * x2) * inv(1 + t) % Q
    y3 = (y1 * y2 + x1 * x2) * inv(1 - t) % Q
    return x3, y3


def ed_mul(p: tuple[int, int], k: int) -> tuple[int, int]:
    acc = (0, 1)
    while k:
        if k & 1:
            acc = ed_add(acc, p)
        p = ed_add(p, p)
        k >>= 1
    return acc


def ed_on_curve(x: int, y: int) -> bool:
    return (-x * x + y * y - 1 - D * x * x * y * y) % Q == 0


def ed_decompress(data: bytes) -> tuple[int, int]:
    if len(data) != 32:
        raise ValueError("edwards encoding must be 32 bytes")
    n = int.from_bytes(data, "little")
    sign, y = n >> 255, n & ((1 << 255) - 1)
    if y >= Q:
        raise ValueError("non-canonical y coordinate")
    x = sqrt((y * y - 1) * inv(D * y * y + 1))
    if x == 0 and sign:
        raise ValueError("non-canonical sign for x = 0")
    if (x & 1) != sign:
        x = Q - x
    return x, y


def ed_compress(x: int, y: int) -> bytes:
    return ((y % Q) | ((x % Q & 1) << 255)).to_bytes(32, "little")


def to_montgomery(x: int, y: int) -> tuple[int, int]:
    if y == 1:
        raise ValueError("the identity has no affine Montgomery form")
    if x == 0:
        return 0, 0
    u = (1 + y) * inv(1 - y) % Q
    v = SQRT_MINUS_A_PLUS_2 * u * inv(x) % Q
    return u, v


def from_montgomery(u: int, v: int) -> tuple[int, int]:
    if v == 0:
        # (0, 0) is the only affine 2-torsion point of Curve25519
        return 0, Q - 1
    x = SQRT_MINUS_A_PLUS_2 * u * inv(v) % Q
    y = (u - 1) * inv(u + 1) % Q
    return x, y


def _low_order_points() -> list[bytes]:
    # any point whose order is divisible by 8 yields a generator of the
    # torsion subgroup after multiplying by L
    y = 2
    while True:
        try:
            point = ed_decompress(y.to_bytes(32, "little"))
        except ValueError:
            y += 1
            continue
        t = ed_mul(point, L)
        if ed_mul(t, 4) != (0, 1):
            break
        y += 1
    points, acc = [], (0, 1)
    for _ in range(8):
        points.append(ed_compress(*acc))
        acc = ed_add(acc, t)
    return points


LOW_ORDER = _low_order_points()
LOW_ORDER_AFFINE = [ed_decompress(p) for p in LOW_ORDER]


# --- Elligator 2 -------------------------------------------------------------

def map_to_curve(r: int) -> tuple[int, int]:
    """Forward map: field element -> Montgomery point (u, v)."""
    r %= Q
    w = -A * inv(1 + NON_SQUARE * r * r) % Q
    e = 1 if is_square(w * (w * w + A * w + 1)) else -1
    u = w if e == 1 else (-w - A) % Q
    v = sqrt(u * (u * u + A * u + 1))
    return u, (-v if e == 1 else v) % Q


def can_represent(u: int) -> bool:
    return u != Q - A and is_square(-NON_SQUARE * u * (u + A))


def representative(u: int, v: int) -> int:
    """Inverse map: Montgomery point -> representative in [0, (Q-1)/2]."""
    if not can_represent(u):
        raise NotEncodable("point has no Elligator 2 representative")
    if is_negative(v):
        return sqrt(-(u + A) * inv(NON_SQUARE * u))
    return sqrt(-u * inv(NON_SQUARE * (u + A)))


def project(point: bytes) -> bytes:
    """Component of a full-curve point in the prime-order subgroup."""
    x, y = ed_decompress(point)
    for _ in range(3):
        x, y = ed_add((x, y), (x, y))
    if (x, y) == (0, 1):
        return IDENTITY
    return sodium.crypto_scalarmult_ed25519_noclamp(
        pow(8, -1, L).to_bytes(32, "little"), ed_compress(x, y)
    )


def encode_uniform(point: bytes, rng) -> bytes:
    """Hide a prime-order point in a 32-byte string that looks uniform.

    A low-order component and the two padding bits are drawn from ``rng``.
    Raises NotEncodable when the shifted point has no representative, which
    happens for about half of the draws; callers resample the point.
    """
    x, y = ed_decompress(point)
    x, y = ed_add((x, y), LOW_ORDER_AFFINE[rng.getrandbits(3)])
    if (x, y) == (0, 1):
        raise NotEncodable("identity has no Montgomery representative")
    r = representative(*to_montgomery(x, y))
    return (r | (rng.getrandbits(2) << 254)).to_bytes(32, "little")


def decode_uniform(data: bytes) -> bytes:
    """Total inverse of encode_uniform: any 32 bytes -> prime-order point."""
    if len(data) != 32:
        raise ValueError("uniform encoding must be 32 bytes")
    r = int.from_bytes(data, "little") & REPR_MASK
    return project(ed_compress(*from_montgomery(*map_to_curve(r))))
