"""Prime-order groups used by the equality test.

Two backends share one interface. ``CurveGroup`` is the prime-order subgroup
of edwards25519 with elements held as canonical 32-byte encodings and scalar
multiplication delegated to libsodium. ``SquaresModPrime`` is the subgroup of
quadratic residues modulo a safe prime; it is tiny, slow-free and lets the
protocol algebra be checked by hand.
"""
from __future__ import annotations

import secrets
from typing import Any

import nacl.bindings as sodium

from . import elligator

Scalar = int
Element = Any

_SYSTEM_RNG = secrets.SystemRandom()


def default_rng(rng=None):
    return _SYSTEM_RNG if rng is None else rng


class NotInGroup(ValueError):
    """Bytes do not decode to an element of the group."""


class Group:
    order: int
    identity: Element
    generator: Element
    element_size: int

    def exp(self, base: Element, k: Scalar) -> Element:
        raise NotImplementedError

    def mul(self, a: Element, b: Element) -> Element:
        raise NotImplementedError

    def inverse(self, a: Element) -> Element:
        raise NotImplementedError

    def contains(self, a: Element) -> bool:
        raise NotImplementedError

    def to_bytes(self, a: Element) -> bytes:
        raise NotImplementedError

    def from_bytes(self, data: bytes) -> Element:
        raise NotImplementedError

    def random_scalar(self, rng=None, nonzero: bool = False) -> Scalar:
        rng = default_rng(rng)
        bits = self.order.bit_length()
        while True:
            k = rng.getrandbits(bits)
            if k < self.order and (k or not nonzero):
                return k

    def random_element(self, rng=None) -> Element:
        return self.exp(self.generator, self.random_scalar(rng))

    def scalar_to_bytes(self, k: Scalar) -> bytes:
        return (k % self.order).to_bytes(32, "little")

    def scalar_from_bytes(self, data: bytes) -> Scalar:
        return int.from_bytes(data, "little") % self.order


class CurveGroup(Group):
    """Prime-order subgroup of edwards25519 (order 2^252 + ...)."""

    order = elligator.L
    identity = elligator.IDENTITY
    element_size = 32

    def __init__(self):
        self.generator = sodium.crypto_scalarmult_ed25519_base_noclamp(
            (1).to_bytes(32, "little")
        )

    def exp(self, base: bytes, k: Scalar) -> bytes:
        k %= self.order
        if k == 0 or base == self.identity:
            return self.identity
        kb = k.to_bytes(32, "little")
        if base == self.generator:
            return sodium.crypto_scalarmult_ed25519_base_noclamp(kb)
        return sodium.crypto_scalarmult_ed25519_noclamp(kb, base)

    def mul(self, a: bytes, b: bytes) -> bytes:
        if a == self.identity:
            return b
        if b == self.identity:
            return a
        return sodium.crypto_core_ed25519_add(a, b)

    def inverse(self, a: bytes) -> bytes:
        if a == self.identity:
            return a
        return sodium.crypto_core_ed25519_sub(self.identity, a)

    def contains(self, a) -> bool:
        if not isinstance(a, bytes) or len(a) != 32:
            return False
        return a == self.identity or sodium.crypto_core_ed25519_is_valid_point(a)

    def to_bytes(self, a: bytes) -> bytes:
        return a

    def from_bytes(self, data: bytes) -> bytes:
        data = bytes(data)
        if not self.contains(data):
            raise NotInGroup("not a canonical prime-order edwards25519 point")
        return data


class SquaresModPrime(Group):
    """Quadratic residues modulo a safe prime ``modulus = 2 * order + 1``."""

    def __init__(self, modulus: int, generator: int):
        if modulus % 2 == 0 or modulus < 5:
            raise ValueError("modulus must be an odd prime >= 5")
        self.modulus = modulus
        self.order = (modulus - 1) // 2
        self.identity = 1
        self.element_size = (modulus.bit_length() + 7) // 8
        if not self.contains(generator) or generator == 1:
            raise ValueError("generator must be a non-trivial square")
        self.generator = generator

    def exp(self, base: int, k: Scalar) -> int:
        return pow(base, k % self.order, self.modulus)

    def mul(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def inverse(self, a: int) -> int:
        return pow(a, -1, self.modulus)

    def contains(self, a) -> bool:
        return (
            isinstance(a, int)
            and 0 < a < self.modulus
            and pow(a, self.order, self.modulus) == 1
        )

    def to_bytes(self, a: int) -> bytes:
        return a.to_bytes(self.element_size, "big")

    def from_bytes(self, data: bytes) -> int:
        a = int.from_bytes(data, "big")
        if len(data) != self.element_size or not self.contains(a):
            raise NotInGroup(f"{data.hex()} is not a square mod {self.modulus}")
        return a


CURVE = CurveGroup()
TOY = SquaresModPrime(23, 2)


def exp(base: Element, k: Scalar, group: Group = CURVE) -> Element:
    return group.exp(base, k)


def mul(a: Element, b: Element, group: Group = CURVE) -> Element:
    return group.mul(a, b)
