import pytest
from conftest import any_packet, load_hex
from hypothesis import given, settings

from turbokv.keys import KEY_MAX, SubRange
from turbokv.switch import hash_key
from turbokv.wire import (ETH_IPV4, ETH_LEN, OP_DEL, OP_GET, OP_PUT, OP_RANGE, STATUS_NOT_FOUND,
                          STATUS_UNSUPPORTED, TOS_HASH, TOS_PROCESSED, ChainHeader, MalformedHeader,
                          Reply, TruncatedChainHeader, TruncatedFrame, UnknownEtherType,
                          UnknownOpCode, WireError, decode, decode_reply, encode, reply_packet,
                          request_packet)

CLIENT, SERVICE = 0x0AFA0001, 0x0AFE0001
S1, S2, S3 = 0x0A000001, 0x0A000002, 0x0A000003
KEY = 0x0123456789ABCDEF0011223344556677


def golden_packets():
    return {
        "get_request": request_packet(OP_GET, 1, CLIENT, SERVICE, request_id=7),
        "put_processed": request_packet(OP_PUT, KEY, CLIENT, S1, request_id=8, tos=TOS_PROCESSED,
                                        value=b"hello", chain=(S2, S3, CLIENT)),
        "get_processed": request_packet(OP_GET, KEY, CLIENT, S3, request_id=9, tos=TOS_PROCESSED,
                                        chain=(CLIENT,)),
        "del_request": request_packet(OP_DEL, KEY, CLIENT, SERVICE, request_id=10),
        "range_request": request_packet(OP_RANGE, 5, CLIENT, SERVICE, end_key=KEY_MAX,
                                        request_id=2 ** 64 - 1),
        "hash_get_request": request_packet(OP_GET, KEY, CLIENT, SERVICE, end_key=hash_key(KEY),
                                           request_id=11, tos=TOS_HASH),
        "reply_get": reply_packet(S3, CLIENT, Reply(9, OP_GET, value=b"\x00\xffv")),
        "reply_not_found": reply_packet(S3, CLIENT, Reply(12, OP_GET, STATUS_NOT_FOUND, value=b"")),
        "reply_put_ack": reply_packet(S3, CLIENT, Reply(8, OP_PUT)),
        "reply_range": reply_packet(S2, CLIENT, Reply(13, OP_RANGE, bounds=SubRange(10, 20),
                                                      pairs=((11, b"a"), (19, b"bc")))),
        "reply_unsupported": reply_packet(0x0AFD0001, CLIENT, Reply(14, OP_RANGE, STATUS_UNSUPPORTED)),
    }


@pytest.mark.parametrize("name", sorted(golden_packets()))
def test_golden_vectors_bit_exact(name):
    pkt = golden_packets()[name]
    raw = load_hex(name)
    assert encode(pkt) == raw
    assert decode(raw) == pkt


def test_get_frame_size():
    raw = encode(golden_packets()["get_request"])
    # 14-byte Ethernet, 12-byte IP, 41-byte TurboKV header
    assert len(raw) == 67
    assert decode(raw).ip.total_len == 53 == len(raw) - ETH_LEN


@pytest.mark.parametrize("name,error", [
    ("bad_truncated_chain", TruncatedChainHeader),
    ("bad_ether_type", UnknownEtherType),
    ("bad_op_code", UnknownOpCode),
    ("bad_truncated_frame", TruncatedFrame),
])
def test_malformed_vectors(name, error):
    with pytest.raises(error) as info:
        decode(load_hex(name))
    if name == "bad_truncated_chain":
        assert "truncated chain header" in str(info.value)


def test_decode_errors_are_distinct():
    kinds = {TruncatedChainHeader, UnknownEtherType, UnknownOpCode, TruncatedFrame}
    assert len(kinds) == 4 and all(issubclass(k, WireError) for k in kinds)


def test_plain_ip_payload_is_opaque():
    pkt = decode(load_hex("reply_get"))
    assert pkt.eth.ether_type == ETH_IPV4 and pkt.kv is None and pkt.chain is None
    assert decode_reply(pkt.payload).value == b"\x00\xffv"


def test_encode_rejects_bad_chain_headers():
    base = golden_packets()["get_request"]
    with pytest.raises(MalformedHeader):
        encode(base.__class__(base.eth, base.ip, base.kv, ChainHeader((CLIENT,))))
    proc = golden_packets()["get_processed"]
    with pytest.raises(MalformedHeader):
        encode(proc.__class__(proc.eth, proc.ip, proc.kv, ChainHeader((), 0)))
    with pytest.raises(MalformedHeader):
        encode(proc.__class__(proc.eth, proc.ip, proc.kv, ChainHeader((CLIENT,), 2)))


def test_range_start_after_end_rejected():
    with pytest.raises(MalformedHeader):
        encode(request_packet(OP_RANGE, 10, CLIENT, SERVICE, end_key=9))


@settings(max_examples=400, deadline=None)
@given(any_packet)
def test_round_trip_property(pkt):
    raw = encode(pkt)
    back = decode(raw)
    assert back == pkt
    assert back.ip.total_len == len(raw) - ETH_LEN
    assert encode(back) == raw


def test_reply_round_trip_each_op():
    for r in (Reply(1, OP_GET, value=b"x" * 128), Reply(2, OP_PUT), Reply(3, OP_DEL),
              Reply(4, OP_RANGE, bounds=SubRange(0, KEY_MAX), pairs=()),
              Reply(5, OP_GET, STATUS_NOT_FOUND, value=b"")):
        assert decode_reply(decode(encode(reply_packet(S1, CLIENT, r))).payload) == r
