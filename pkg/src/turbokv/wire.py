"""Bit-exact codec for TurboKV request frames and storage-node replies.

Frame layout (all integers big-endian)::

    Ethernet   dst_mac(6) src_mac(6) ether_type(2)
    IP         tos(1) total_len(2) proto(1) src_ip(4) dst_ip(4)
    TurboKV    op_code(1) key(16) end_key_or_hash(16) request_id(8)    [ether_type 0x88B5]
    Chain      c_length(1) ip(4) * c_length                           [tos 0x04]
    Payload    remaining bytes

``total_len`` counts every byte after the Ethernet header. Frames with
ether_type 0x0800 carry no TurboKV header and an opaque payload; storage
replies use that form with the reply body defined by :class:`Reply`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .keys import KEY_MAX, SubRange

ETH_TURBOKV = 0x88B5
ETH_IPV4 = 0x0800
ETHER_TYPES = (ETH_TURBOKV, ETH_IPV4)

TOS_PLAIN = 0x00
TOS_RANGE = 0x01
TOS_HASH = 0x02
TOS_PROCESSED = 0x04
TOS_VALUES = (TOS_PLAIN, TOS_RANGE, TOS_HASH, TOS_PROCESSED)

OP_GET = 0x01
OP_PUT = 0x02
OP_DEL = 0x03
OP_RANGE = 0x04
OP_CODES = (OP_GET, OP_PUT, OP_DEL, OP_RANGE)
OP_NAMES = {OP_GET: "get", OP_PUT: "put", OP_DEL: "del", OP_RANGE: "range"}
WRITE_OPS = (OP_PUT, OP_DEL)

PROTO_TURBOKV = 0xFD

STATUS_OK = 0x00
STATUS_NOT_FOUND = 0x01
STATUS_UNSUPPORTED = 0x02
STATUS_ERROR = 0x03

UNRESOLVED_IP = 0  # chain slot whose node the receiver must look up itself

_ETH = struct.Struct(">6s6sH")
_IP = struct.Struct(">BHBII")
_KV = struct.Struct(">B16s16sQ")
_REPLY = struct.Struct(">QBB")

ETH_LEN = _ETH.size
IP_LEN = _IP.size
KV_LEN = _KV.size


class WireError(ValueError):
    """Base class for encode/decode failures."""


class TruncatedFrame(WireError):
    pass


class UnknownEtherType(WireError):
    pass


class UnknownOpCode(WireError):
    pass


class TruncatedChainHeader(WireError):
    pass


class MalformedHeader(WireError):
    pass


def mac_for(ip: int) -> bytes:
    return b"\x02\x00" + ip.to_bytes(4, "big")


@dataclass(frozen=True)
class EthHeader:
    ether_type: int
    dst_mac: bytes = bytes(6)
    src_mac: bytes = bytes(6)


@dataclass(frozen=True)
class IpHeader:
    tos: int
    src_ip: int
    dst_ip: int
    proto: int = PROTO_TURBOKV
    # filled in by decode; encode always recomputes it
    total_len: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TurboKvHeader:
    op_code: int
    key: int
    end_key_or_hash: int = 0
    request_id: int = 0

    @property
    def op_name(self) -> str:
        return OP_NAMES[self.op_code]


@dataclass(frozen=True)
class ChainHeader:
    ips: tuple[int, ...]
    c_length: int = -1

    def __post_init__(self):
        object.__setattr__(self, "ips", tuple(self.ips))
        if self.c_length == -1:
            object.__setattr__(self, "c_length", len(self.ips))


@dataclass(frozen=True)
class Packet:
    eth: EthHeader
    ip: IpHeader
    kv: TurboKvHeader | None = None
    chain: ChainHeader | None = None
    payload: bytes = b""

    @property
    def is_turbokv(self) -> bool:
        return self.eth.ether_type == ETH_TURBOKV

    def with_ip(self, **changes) -> "Packet":
        return replace(self, ip=replace(self.ip, **changes))

    def with_kv(self, **changes) -> "Packet":
        return replace(self, kv=replace(self.kv, **changes))


def request_packet(op_code: int, key: int, src_ip: int, dst_ip: int, *, end_key: int = 0,
                   request_id: int = 0, tos: int = TOS_RANGE, value: bytes | None = None,
                   chain: Sequence[int] | None = None) -> Packet:
    """Client-side constructor for a TurboKV request frame."""
    return Packet(
        EthHeader(ETH_TURBOKV, mac_for(dst_ip), mac_for(src_ip)),
        IpHeader(tos, src_ip, dst_ip),
        TurboKvHeader(op_code, key, end_key, request_id),
        ChainHeader(tuple(chain)) if chain is not None else None,
        value_payload(value) if value is not None else b"",
    )


def reply_packet(src_ip: int, dst_ip: int, reply: "Reply") -> Packet:
    return Packet(EthHeader(ETH_IPV4, mac_for(dst_ip), mac_for(src_ip)),
                  IpHeader(TOS_PLAIN, src_ip, dst_ip), payload=encode_reply(reply))


def _check(pkt: Packet) -> None:
    et = pkt.eth.ether_type
    if et not in ETHER_TYPES:
        raise UnknownEtherType(f"ether_type {et:#06x}")
    if len(pkt.eth.dst_mac) != 6 or len(pkt.eth.src_mac) != 6:
        raise MalformedHeader("MAC addresses are 6 bytes")
    if pkt.ip.tos not in TOS_VALUES:
        raise MalformedHeader(f"tos {pkt.ip.tos:#04x}")
    if et == ETH_IPV4:
        if pkt.kv is not None or pkt.chain is not None:
            raise MalformedHeader("plain IP frames carry no TurboKV or chain header")
        return
    if pkt.kv is None:
        raise MalformedHeader("TurboKV frame without TurboKV header")
    kv = pkt.kv
    if kv.op_code not in OP_CODES:
        raise UnknownOpCode(f"op_code {kv.op_code:#04x}")
    if not (0 <= kv.key <= KEY_MAX and 0 <= kv.end_key_or_hash <= KEY_MAX):
        raise MalformedHeader("key fields are 128-bit")
    if kv.op_code == OP_RANGE and pkt.ip.tos != TOS_HASH and kv.key > kv.end_key_or_hash:
        raise MalformedHeader("range start exceeds range end")
    if (pkt.chain is not None) != (pkt.ip.tos == TOS_PROCESSED):
        raise MalformedHeader("chain header present iff tos = 0x04")
    if pkt.chain is not None:
        if pkt.chain.c_length < 1:
            raise MalformedHeader("chain header needs c_length >= 1")
        if pkt.chain.c_length != len(pkt.chain.ips):
            raise MalformedHeader("c_length does not match the number of chain ips")


def encode(pkt: Packet) -> bytes:
    _check(pkt)
    parts = []
    if pkt.kv is not None:
        kv = pkt.kv
        parts.append(_KV.pack(kv.op_code, kv.key.to_bytes(16, "big"),
                              kv.end_key_or_hash.to_bytes(16, "big"), kv.request_id))
    if pkt.chain is not None:
        parts.append(struct.pack(f">B{len(pkt.chain.ips)}I", pkt.chain.c_length, *pkt.chain.ips))
    parts.append(pkt.payload)
    body = b"".join(parts)
    total_len = IP_LEN + len(body)
    if total_len > 0xFFFF:
        raise WireError(f"frame of {total_len} bytes exceeds the 16-bit total_len")
    ip = pkt.ip
    return (_ETH.pack(pkt.eth.dst_mac, pkt.eth.src_mac, pkt.eth.ether_type)
            + _IP.pack(ip.tos, total_len, ip.proto, ip.src_ip, ip.dst_ip) + body)


def decode(frame: bytes) -> Packet:
    if len(frame) < ETH_LEN:
        raise TruncatedFrame("frame shorter than an Ethernet header")
    dst, src, et = _ETH.unpack_from(frame, 0)
    if et not in ETHER_TYPES:
        raise UnknownEtherType(f"ether_type {et:#06x}")
    eth = EthHeader(et, dst, src)
    if len(frame) < ETH_LEN + IP_LEN:
        raise TruncatedFrame("frame shorter than the IP header")
    tos, total_len, proto, src_ip, dst_ip = _IP.unpack_from(frame, ETH_LEN)
    if total_len != len(frame) - ETH_LEN:
        raise TruncatedFrame(f"total_len {total_len} but {len(frame) - ETH_LEN} bytes follow")
    if tos not in TOS_VALUES:
        raise MalformedHeader(f"tos {tos:#04x}")
    ip = IpHeader(tos, src_ip, dst_ip, proto, total_len)
    off = ETH_LEN + IP_LEN
    if et == ETH_IPV4:
        return Packet(eth, ip, payload=bytes(frame[off:]))
    if len(frame) < off + KV_LEN:
        raise TruncatedFrame("frame shorter than the TurboKV header")
    op, key, end, rid = _KV.unpack_from(frame, off)
    if op not in OP_CODES:
        raise UnknownOpCode(f"op_code {op:#04x}")
    kv = TurboKvHeader(op, int.from_bytes(key, "big"), int.from_bytes(end, "big"), rid)
    off += KV_LEN
    chain = None
    if tos == TOS_PROCESSED:
        if len(frame) < off + 1:
            raise TruncatedChainHeader("missing c_length")
        c_length = frame[off]
        off += 1
        if c_length == 0:
            raise MalformedHeader("c_length of zero")
        if len(frame) < off + 4 * c_length:
            raise TruncatedChainHeader(
                f"truncated chain header: c_length {c_length} needs {4 * c_length} bytes, "
                f"{len(frame) - off} remain")
        ips = struct.unpack_from(f">{c_length}I", frame, off)
        off += 4 * c_length
        chain = ChainHeader(ips, c_length)
    pkt = Packet(eth, ip, kv, chain, bytes(frame[off:]))
    if op == OP_RANGE and tos != TOS_HASH and kv.key > kv.end_key_or_hash:
        raise MalformedHeader("range start exceeds range end")
    return pkt


# -- payloads -----------------------------------------------------------------

def value_payload(value: bytes) -> bytes:
    if len(value) > 0xFFFF:
        raise WireError("value longer than 65535 bytes")
    return struct.pack(">H", len(value)) + value


def parse_value_payload(payload: bytes, offset: int = 0) -> tuple[bytes, int]:
    if len(payload) < offset + 2:
        raise TruncatedFrame("missing value length")
    (n,) = struct.unpack_from(">H", payload, offset)
    end = offset + 2 + n
    if len(payload) < end:
        raise TruncatedFrame("value shorter than value_len")
    return bytes(payload[offset + 2:end]), end


def encode_pairs(pairs: Iterable[tuple[int, bytes]]) -> bytes:
    pairs = list(pairs)
    if len(pairs) > 0xFFFF:
        raise WireError("more than 65535 pairs in one payload")
    out = [struct.pack(">H", len(pairs))]
    for key, value in pairs:
        out.append(key.to_bytes(16, "big"))
        out.append(value_payload(value))
    return b"".join(out)


def decode_pairs(payload: bytes, offset: int = 0) -> tuple[list[tuple[int, bytes]], int]:
    if len(payload) < offset + 2:
        raise TruncatedFrame("missing pair count")
    (count,) = struct.unpack_from(">H", payload, offset)
    off = offset + 2
    pairs = []
    for _ in range(count):
        if len(payload) < off + 16:
            raise TruncatedFrame("truncated pair key")
        key = int.from_bytes(payload[off:off + 16], "big")
        value, off = parse_value_payload(payload, off + 16)
        pairs.append((key, value))
    return pairs, off


@dataclass(frozen=True)
class Reply:
    """Body of a storage-node reply.

    GET replies carry ``value``; RANGE replies echo the served sub-range in
    ``bounds`` together with the matching ``pairs``; PUT/DEL acks carry only
    the status byte.
    """

    request_id: int
    op_code: int
    status: int = STATUS_OK
    value: bytes | None = None
    bounds: SubRange | None = None
    pairs: tuple[tuple[int, bytes], ...] | None = None


def encode_reply(reply: Reply) -> bytes:
    head = _REPLY.pack(reply.request_id, reply.status, reply.op_code)
    if reply.status not in (STATUS_OK, STATUS_NOT_FOUND):
        return head
    if reply.op_code == OP_GET:
        return head + value_payload(reply.value or b"")
    if reply.op_code == OP_RANGE:
        b = reply.bounds
        return (head + b.start.to_bytes(16, "big") + b.end.to_bytes(16, "big")
                + encode_pairs(reply.pairs or ()))
    return head


def decode_reply(payload: bytes) -> Reply:
    if len(payload) < _REPLY.size:
        raise TruncatedFrame("reply shorter than its header")
    rid, status, op = _REPLY.unpack_from(payload, 0)
    if op not in OP_CODES:
        raise UnknownOpCode(f"op_code {op:#04x}")
    off = _REPLY.size
    if status not in (STATUS_OK, STATUS_NOT_FOUND):
        return Reply(rid, op, status)
    if op == OP_GET:
        value, _ = parse_value_payload(payload, off)
        return Reply(rid, op, status, value=value)
    if op == OP_RANGE:
        if len(payload) < off + 32:
            raise TruncatedFrame("truncated scan bounds")
        start = int.from_bytes(payload[off:off + 16], "big")
        end = int.from_bytes(payload[off + 16:off + 32], "big")
        pairs, _ = decode_pairs(payload, off + 32)
        return Reply(rid, op, status, bounds=SubRange(start, end), pairs=tuple(pairs))
    return Reply(rid, op, status)
