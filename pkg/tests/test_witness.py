import hashlib
import random

from hypothesis import given, settings, strategies as st

from odt.device import DEFAULT_OMEGA, DeviceSim, MemoryException, Omega, load_process
from odt.group import CURVE
from odt.witness import MeasureResult, compute_witness, measure, select_addresses

BASE = 0x100_0000_0000
K = bytes(range(32))
# word indices for K under the default region, frozen from a plain hashlib computation
K_INDICES = [66048, 122639, 74713, 100875, 19654]


def test_select_known_answer():
    assert select_addresses(K) == tuple(BASE + 8 * i for i in K_INDICES)


@given(st.binary(min_size=32, max_size=32), st.integers(1, 12))
def test_select_matches_definition(k, m):
    expect = tuple(
        BASE + 8 * (int.from_bytes(hashlib.sha256(i.to_bytes(8, "big") + k).digest(), "big") % 2**17)
        for i in range(1, m + 1)
    )
    assert select_addresses(k, m) == expect
    assert all(a in DEFAULT_OMEGA for a in expect)


@given(st.binary(min_size=32, max_size=32))
def test_each_address_depends_only_on_index_and_key(k):
    full = select_addresses(k, 8)
    for j in range(1, 8):
        assert select_addresses(k, j) == full[:j]


def test_single_word_region():
    om = Omega(((BASE, BASE + 8),))
    assert set(select_addresses(K, 7, om)) == {BASE}


def test_one_bit_key_change_decorrelates():
    rng = random.Random(30)
    matches = 0
    for _ in range(1000):
        k = bytearray(rng.randbytes(32))
        a = select_addresses(bytes(k))
        bit = rng.randrange(256)
        k[bit // 8] ^= 1 << (bit % 8)
        b = select_addresses(bytes(k))
        matches += sum(x == y for x, y in zip(a, b))
    # expected 5000 / 2^17 ~ 0.04 positional matches
    assert matches <= 3


def test_measure_clean_unmapped_and_interrupted():
    dev = DeviceSim("d", has_otee=True)
    img = load_process(dev, 4, 64)
    addrs = tuple(BASE + 8 * i for i in (3, 9, 1, 40, 63))
    clean = measure(dev.view(img, dev.new_session()), addrs)
    assert clean == MeasureResult(1, tuple(img.memory[a] for a in addrs))

    gap = measure(dev.view(img, dev.new_session()), addrs[:4] + (BASE + 8 * 64,))
    assert gap.b_co == 0 and gap.words[-1] == 0 and gap.words[:4] == clean.words[:4]

    dev.schedule_interrupt(3, 2)
    ctx = dev.new_session()
    hit = measure(dev.view(img, ctx), addrs)
    assert hit.b_co == 0
    assert hit.words[1] == 0
    assert hit.words[0] == clean.words[0] and hit.words[2:] == clean.words[2:]
    assert [e.read_index for e in ctx.exceptions] == [2]


def test_witness_known_answer():
    w = compute_witness(MeasureResult(1, (0,)))
    assert w.digest.hex() == "a536aa3cede6ea3c1f3e0357c3c60e0f216a8c89b853df13b29daa8f85065dfb"
    assert w.scalar == int.from_bytes(w.digest, "big") % CURVE.order


def test_witness_serialization():
    mr = MeasureResult(0, (1, 2**64 - 1))
    data = b"\x00" + (1).to_bytes(8, "big") + (2**64 - 1).to_bytes(8, "big")
    assert compute_witness(mr).digest == hashlib.sha256(data).digest()


def test_b_co_flip_avalanche():
    rng = random.Random(31)
    flips = []
    for _ in range(500):
        words = tuple(rng.getrandbits(64) for _ in range(5))
        a = compute_witness(MeasureResult(1, words)).digest
        b = compute_witness(MeasureResult(0, words)).digest
        flips.append(bin(int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).count("1"))
    assert abs(sum(flips) / len(flips) - 128) < 3


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**32))
def test_agreement_between_endpoints(k, seed):
    om = Omega(((BASE, BASE + 8 * 512),))
    mine = load_process(DeviceSim("otee", True), seed, 512, "agent", om)
    theirs = load_process(DeviceSim("aggressor"), seed, 512, "copy", om)
    addrs = select_addresses(k, 5, om)
    dev = DeviceSim("otee", True)
    dev.add_process(mine)
    left = compute_witness(measure(dev.view(mine, dev.new_session()), addrs))
    right = compute_witness(measure(theirs, addrs))
    assert left == right


@given(st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=8), st.data())
def test_sensitivity_to_every_word(words, data):
    i = data.draw(st.integers(0, len(words) - 1))
    delta = data.draw(st.integers(1, 2**64 - 1))
    changed = list(words)
    changed[i] ^= delta
    a = compute_witness(MeasureResult(1, tuple(words)))
    b = compute_witness(MeasureResult(1, tuple(changed)))
    assert a.scalar != b.scalar


def test_direct_image_read_faults_count():
    img = load_process(DeviceSim("d"), 1, 4)
    out = measure(img, (BASE, BASE + 8 * 10))
    assert out.b_co == 0
    assert isinstance(img.read(BASE + 8 * 10), MemoryException)
