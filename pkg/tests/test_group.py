import random

import pytest
from hypothesis import given, settings, strategies as st

from odt.group import CURVE, TOY, NotInGroup, SquaresModPrime, exp, mul

from oracle import (
    BASE,
    NEUTRAL,
    ORDER,
    POWERS,
    ed_add,
    ed_compress,
    ed_decompress,
    ed_mul,
    in_prime_subgroup,
    toy_exp,
    toy_inv,
    toy_mul,
)

scalars = st.integers(min_value=0, max_value=CURVE.order - 1)
toy_elems = st.sampled_from(POWERS)
toy_scalars = st.integers(min_value=-50, max_value=50)


# --- small group against the tabulated oracle -------------------------------

def test_toy_worked_values():
    assert exp(2, 7, TOY) == 13 == toy_exp(2, 7)
    assert mul(8, 13, TOY) == 12 == toy_mul(8, 13)


def test_toy_group_is_the_oracle_group():
    assert TOY.order == 11 and TOY.generator == 2 and TOY.identity == 1
    assert sorted(x for x in range(1, 23) if TOY.contains(x)) == sorted(POWERS)


@given(toy_elems, toy_scalars)
def test_toy_exp_matches_oracle(b, k):
    assert TOY.exp(b, k) == toy_exp(b, k)


@given(toy_elems, toy_elems)
def test_toy_mul_and_inverse_match_oracle(a, b):
    assert TOY.mul(a, b) == toy_mul(a, b)
    assert TOY.inverse(a) == toy_inv(a)


def test_toy_rejects_non_squares():
    for x in range(23):
        assert TOY.contains(x) == (x in POWERS)
    with pytest.raises(NotInGroup):
        TOY.from_bytes(bytes([5]))
    assert TOY.from_bytes(bytes([13])) == 13


def test_toy_generator_validation():
    with pytest.raises(ValueError):
        SquaresModPrime(23, 5)
    with pytest.raises(ValueError):
        SquaresModPrime(23, 1)


# --- curve group -------------------------------------------------------------

def test_identity_and_generator():
    assert CURVE.exp(CURVE.generator, 0) == CURVE.identity
    assert CURVE.exp(CURVE.generator, 1) == CURVE.generator
    assert CURVE.generator == ed_compress(BASE)
    assert CURVE.exp(CURVE.generator, CURVE.order) == CURVE.identity


def test_exponent_law_example():
    g = CURVE.generator
    assert mul(exp(g, 3), exp(g, 4)) == exp(g, 7)
    a = CURVE.random_element(random.Random(1))
    assert mul(a, CURVE.identity) == a == mul(CURVE.identity, a)


@settings(max_examples=60, deadline=None)
@given(scalars)
def test_fixed_base_matches_reference(k):
    assert CURVE.exp(CURVE.generator, k) == ed_compress(ed_mul(k, BASE))


@settings(max_examples=40, deadline=None)
@given(scalars, scalars)
def test_variable_base_and_add_match_reference(a, k):
    p = ed_mul(a, BASE)
    pb = ed_compress(p)
    assert CURVE.exp(pb, k) == ed_compress(ed_mul(k, p))
    q = ed_mul(k, BASE)
    assert CURVE.mul(pb, ed_compress(q)) == ed_compress(ed_add(p, q))


@settings(max_examples=40, deadline=None)
@given(scalars)
def test_inverse_matches_reference(a):
    p = ed_mul(a, BASE)
    neg = ed_mul(ORDER - 1, p)
    assert CURVE.inverse(ed_compress(p)) == ed_compress(neg)
    assert CURVE.mul(ed_compress(p), CURVE.inverse(ed_compress(p))) == CURVE.identity


def test_group_laws_on_random_triples():
    rng = random.Random(2024)
    g = CURVE.generator
    for _ in range(10_000):
        a, b = CURVE.random_scalar(rng), CURVE.random_scalar(rng)
        x, y, z = (CURVE.random_element(rng) for _ in range(3))
        assert CURVE.exp(CURVE.exp(g, a), b) == CURVE.exp(g, a * b % CURVE.order)
        assert CURVE.mul(x, y) == CURVE.mul(y, x)
        assert CURVE.mul(CURVE.mul(x, y), z) == CURVE.mul(x, CURVE.mul(y, z))


def test_random_elements_are_in_prime_subgroup():
    rng = random.Random(3)
    for _ in range(20):
        e = CURVE.random_element(rng)
        assert CURVE.contains(e)
        assert in_prime_subgroup(e)


def test_from_bytes_rejects_torsion_and_garbage():
    # a point of order 8 sits on the curve but outside the prime-order subgroup
    torsion = None
    for y in range(2, 200):
        pt = ed_decompress(y.to_bytes(32, "little"))
        if pt is None:
            continue
        t = ed_mul(ORDER, pt)
        if ed_compress(t) != ed_compress(NEUTRAL):
            torsion = ed_compress(t)
            break
    assert torsion is not None
    with pytest.raises(NotInGroup):
        CURVE.from_bytes(torsion)
    with pytest.raises(NotInGroup):
        CURVE.from_bytes(b"\xff" * 32)
    with pytest.raises(NotInGroup):
        CURVE.from_bytes(b"\x01" * 31)
    assert not CURVE.contains(12345)


def test_scalar_encoding_round_trip():
    rng = random.Random(4)
    for _ in range(100):
        k = CURVE.random_scalar(rng)
        b = CURVE.scalar_to_bytes(k)
        assert len(b) == 32 and CURVE.scalar_from_bytes(b) == k
    assert CURVE.scalar_to_bytes(CURVE.order + 5) == (5).to_bytes(32, "little")


def test_random_scalar_nonzero():
    class Zeros:
        def __init__(self):
            self.calls = 0

        def getrandbits(self, n):
            self.calls += 1
            return 0 if self.calls < 3 else 9

    assert CURVE.random_scalar(Zeros(), nonzero=True) == 9
