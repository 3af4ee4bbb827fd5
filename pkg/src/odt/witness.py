"""Key-derived memory measurement and the co-residence witness."""
from __future__ import annotations

from dataclasses import dataclass

from .device import DEFAULT_OMEGA, MemoryException, Omega
from .group import CURVE, Group, Scalar
from .primitives import hash256

DEFAULT_LOCATIONS = 5


@dataclass(frozen=True)
class MeasureResult:
    b_co: int
    words: tuple[int, ...]


@dataclass(frozen=True)
class Witness:
    digest: bytes
    scalar: Scalar


def select_addresses(
    k: bytes, m: int = DEFAULT_LOCATIONS, omega: Omega = DEFAULT_OMEGA
) -> tuple[int, ...]:
    """c_i = address of word H(be64(i) || k) mod |omega|, for i = 1..m.

    Each address depends on (i, k) alone, so revealing earlier locations says
    nothing about later ones.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    return tuple(
        omega.address_of(
            int.from_bytes(hash256(i.to_bytes(8, "big") + k), "big") % omega.total_words
        )
        for i in range(1, m + 1)
    )


def measure(view, addrs: tuple[int, ...]) -> MeasureResult:
    """Read every address in order. Any fault zeroes its slot and clears b_co."""
    b_co, words = 1, []
    for addr in addrs:
        word = view.read(addr)
        if isinstance(word, MemoryException):
            b_co = 0
            word = 0
        words.append(word)
    return MeasureResult(b_co, tuple(words))


def compute_witness(mr: MeasureResult, group: Group = CURVE) -> Witness:
    data = bytes([mr.b_co]) + b"".join(w.to_bytes(8, "big") for w in mr.words)
    digest = hash256(data)
    return Witness(digest, int.from_bytes(digest, "big") % group.order)
