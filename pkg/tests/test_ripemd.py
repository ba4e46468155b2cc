import random

from Crypto.Hash import RIPEMD160
from hypothesis import given
from hypothesis import strategies as st

from turbokv.keys import KEY_SPACE, key_to_bytes
from turbokv.ripemd import ripemd160
from turbokv.switch import hash_key


def test_empty_input_reference_vector():
    assert ripemd160(b"").hex() == "9c1185a5c5e9fc54612808977ee8f548b2258d31"


@given(st.binary(max_size=200))
def test_matches_independent_implementation(data):
    assert ripemd160(data) == RIPEMD160.new(data).digest()


def test_hash_key_truncates_digest():
    k = 0x0123456789ABCDEF0011223344556677
    full = RIPEMD160.new(key_to_bytes(k)).digest()
    assert hash_key(k) == int.from_bytes(full[:16], "big")
    assert hash_key(k) == hash_key(k)


def test_hash_uniformity_over_sixteen_ranges():
    rng = random.Random(2024)
    hits = [0] * 16
    for _ in range(100_000):
        hits[hash_key(rng.getrandbits(128)) * 16 // KEY_SPACE] += 1
    assert all(abs(h - 6250) <= 0.05 * 6250 for h in hits), hits
