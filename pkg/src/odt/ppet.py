"""Privacy-preserving equality test between a prover holding w and a verifier
holding w'.

    prover                        verifier
    u <- G             --u-->
                                  s <- Z_p, v = g^s * u^w'
                       <--v--
    t <- Z_p \\ {0}
    y = g^t, z = v^t * u^(-wt)
                       --y,z-->
                                  accept iff z == y^s

The verifier learns only whether w == w'. Witnesses enter as scalars already
reduced modulo the group order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import elligator
from .group import CURVE, Element, Group, NotInGroup, Scalar, default_rng

MAX_ENCODING_ATTEMPTS = 128


class EncodingExhausted(RuntimeError):
    """No Elligator-encodable commitment found; the RNG is almost surely broken."""


@dataclass(frozen=True)
class VerifierState:
    u: Element
    s: Scalar
    w_expected: Scalar
    v: Element
    # uniform 32-byte encoding of v, present when an encodable v was required
    nonce: Optional[bytes] = None


@dataclass(frozen=True)
class PpetResponse:
    y: Element
    z: Element


def prover_init(rng=None, group: Group = CURVE) -> Element:
    return group.random_element(rng)


def verifier_commit(
    u: Element,
    w_expected: Scalar,
    rng=None,
    require_encodable: bool = False,
    group: Group = CURVE,
) -> VerifierState:
    """Commit to ``w_expected``; optionally resample until v hides in a nonce."""
    rng = default_rng(rng)
    if require_encodable and group is not CURVE:
        raise ValueError("uniform encoding is only defined for the curve group")
    u_w = group.exp(u, w_expected)
    for _ in range(MAX_ENCODING_ATTEMPTS if require_encodable else 1):
        s = group.random_scalar(rng)
        v = group.mul(group.exp(group.generator, s), u_w)
        if not require_encodable:
            return VerifierState(u, s, w_expected % group.order, v)
        try:
            nonce = elligator.encode_uniform(v, rng)
        except elligator.NotEncodable:
            continue
        return VerifierState(u, s, w_expected % group.order, v, nonce)
    raise EncodingExhausted(
        f"no encodable commitment after {MAX_ENCODING_ATTEMPTS} attempts"
    )


def _parse(v_raw, group: Group) -> Optional[Element]:
    if isinstance(v_raw, (bytes, bytearray)) and group is not CURVE:
        try:
            return group.from_bytes(bytes(v_raw))
        except NotInGroup:
            return None
    return v_raw if group.contains(v_raw) else None


def prover_respond(
    u: Element, v_raw, w: Scalar, rng=None, group: Group = CURVE
) -> PpetResponse:
    """Answer a commitment. Anything that is not a group element gets two
    independent random elements back, so malformed input never errors."""
    rng = default_rng(rng)
    v = _parse(v_raw, group)
    if v is None:
        return PpetResponse(group.random_element(rng), group.random_element(rng))
    t = group.random_scalar(rng, nonzero=True)
    masked = group.mul(v, group.inverse(group.exp(u, w)))
    return PpetResponse(group.exp(group.generator, t), group.exp(masked, t))


def verifier_check(resp: PpetResponse, st: VerifierState, group: Group = CURVE) -> bool:
    if not (group.contains(resp.y) and group.contains(resp.z)):
        return False
    return group.exp(resp.y, st.s) == resp.z
