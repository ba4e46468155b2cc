"""Storage nodes: an ordered in-process engine plus the TurboKV packet shim.

The shim applies chain replication exactly as carried in the chain header.
A chain slot holding :data:`~turbokv.wire.UNRESOLVED_IP` means the sender
did not know the successor; the node then consults its own copy of the
directory (the baselines' per-hop lookup). TurboKV switches always fill
every slot, so in-switch coordination performs no node-side lookups.
"""

from __future__ import annotations

import enum
import itertools
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Protocol

from sortedcontainers import SortedDict

from .keys import Directory, NodeId, PartitionMode, Record, SubRange
from .switch import hash_key
from .wire import (OP_DEL, OP_GET, OP_PUT, OP_RANGE, STATUS_NOT_FOUND, STATUS_OK,
                   TOS_PROCESSED, UNRESOLVED_IP, ChainHeader, Packet, Reply, WireError,
                   decode_pairs, encode_pairs, parse_value_payload, reply_packet)


class StorageEngine(Protocol):
    def get(self, key: int) -> bytes | None: ...
    def put(self, key: int, value: bytes) -> None: ...
    def delete(self, key: int) -> None: ...
    def scan(self, start: int, end: int) -> list[tuple[int, bytes]]: ...
    def items(self) -> Iterator[tuple[int, bytes]]: ...
    def __len__(self) -> int: ...


class OrderedMapEngine:
    """Sorted in-memory map; stands in for LevelDB behind the shim."""

    def __init__(self, pairs: Iterable[tuple[int, bytes]] = ()):
        self._data = SortedDict(pairs)

    def get(self, key):
        return self._data.get(key)

    def put(self, key, value):
        self._data[key] = value

    def delete(self, key):
        self._data.pop(key, None)

    def scan(self, start, end):
        data = self._data
        return [(k, data[k]) for k in data.irange(start, end)]

    def delete_range(self, start, end):
        for k in list(self._data.irange(start, end)):
            del self._data[k]

    def items(self):
        return iter(self._data.items())

    def __len__(self):
        return len(self._data)


class Phase(enum.Enum):
    COPY = "copy"
    PUBLISH = "publish"
    CLEANUP = "cleanup"


@dataclass
class MigrationJob:
    """Move one replica of ``range`` from ``source`` to ``destination``.

    ``kind`` is ``"replace"`` (destination takes the source's chain position),
    ``"append"`` (destination becomes the new tail, source stays) or
    ``"split"`` (replace restricted to the upper half of a split record).
    """

    range: SubRange
    source: NodeId
    destination: NodeId
    kind: str = "replace"
    job_id: int = field(default_factory=itertools.count().__next__)
    phase: Phase = Phase.COPY
    reason: str = ""
    parent: SubRange | None = None  # split jobs: the record being divided

    def advance(self) -> None:
        order = list(Phase)
        i = order.index(self.phase)
        if i + 1 >= len(order):
            raise ValueError("job already in cleanup")
        self.phase = order[i + 1]


@dataclass(frozen=True)
class MigrationMessage:
    """Controller-to-node migration RPC: ``(job_id, phase, range, pair-list)``."""

    job_id: int
    phase: Phase
    range: SubRange
    pairs: tuple[tuple[int, bytes], ...] = ()

    _HEAD = struct.Struct(">QB16s16s")
    _PHASES = {Phase.COPY: 1, Phase.PUBLISH: 2, Phase.CLEANUP: 3}

    def encode(self) -> bytes:
        return self._HEAD.pack(self.job_id, self._PHASES[self.phase],
                               self.range.start.to_bytes(16, "big"),
                               self.range.end.to_bytes(16, "big")) + encode_pairs(self.pairs)

    @classmethod
    def decode(cls, raw: bytes) -> "MigrationMessage":
        if len(raw) < cls._HEAD.size:
            raise WireError("truncated migration message")
        job_id, ph, start, end = cls._HEAD.unpack_from(raw, 0)
        phase = {v: k for k, v in cls._PHASES.items()}.get(ph)
        if phase is None:
            raise WireError(f"unknown migration phase {ph}")
        pairs, _ = decode_pairs(raw, cls._HEAD.size)
        return cls(job_id, phase, SubRange(int.from_bytes(start, "big"), int.from_bytes(end, "big")),
                   tuple(pairs))


def chunked_messages(job_id: int, phase: Phase, rng: SubRange, pairs: list,
                     chunk: int = 0xFFFF) -> list[MigrationMessage]:
    if not pairs:
        return [MigrationMessage(job_id, phase, rng)]
    return [MigrationMessage(job_id, phase, rng, tuple(pairs[i:i + chunk]))
            for i in range(0, len(pairs), chunk)]


@dataclass(frozen=True)
class Redirect:
    """Post-publish forwarding for requests that were routed with an old chain."""

    range: SubRange
    target: NodeId
    kind: str  # "replace": forward without applying; "append": apply, then forward


class Handled(NamedTuple):
    out: list[Packet]
    lookups: int
    coordinated: bool = False  # only forwarded as server-driven coordinator


class NodeState:
    def __init__(self, node: NodeId, mode: PartitionMode = PartitionMode.RANGE,
                 engine: StorageEngine | None = None,
                 directory: Callable[[], Directory] | None = None,
                 capacity: int | None = None):
        self.node = node
        self.mode = mode
        self.engine = engine if engine is not None else OrderedMapEngine()
        self.directory = directory
        self.capacity = capacity
        self.redirects: list[Redirect] = []
        self.alive = True
        self.lookups = 0
        self.handled = 0
        self.dropped = 0
        self.overflowed = False

    def __repr__(self):
        return f"NodeState({self.node}, pairs={len(self.engine)})"

    # -- matching --------------------------------------------------------------
    def matching_value(self, key: int) -> int:
        return hash_key(key) if self.mode is PartitionMode.HASH else key

    def pairs_in(self, rng: SubRange) -> list[tuple[int, bytes]]:
        if self.mode is PartitionMode.RANGE:
            return self.engine.scan(rng.start, rng.end)
        return sorted((k, v) for k, v in self.engine.items() if hash_key(k) in rng)

    def count_in(self, rng: SubRange) -> int:
        return len(self.pairs_in(rng))

    # -- migration RPCs --------------------------------------------------------
    def extract_range(self, rng: SubRange) -> list[tuple[int, bytes]]:
        return self.pairs_in(rng)

    def ingest_range(self, pairs: Iterable[tuple[int, bytes]]) -> None:
        for k, v in pairs:
            self.engine.put(k, v)
        self._check_capacity()

    def drop_range(self, rng: SubRange) -> None:
        if self.mode is PartitionMode.RANGE and hasattr(self.engine, "delete_range"):
            self.engine.delete_range(rng.start, rng.end)
        else:
            for k, _ in self.pairs_in(rng):
                self.engine.delete(k)

    def sync_range(self, rng: SubRange, pairs: list[tuple[int, bytes]]) -> None:
        """Make this node's contents for ``rng`` exactly ``pairs``."""
        self.drop_range(rng)
        self.ingest_range(pairs)

    def receive_migration(self, msg: MigrationMessage) -> None:
        if msg.phase is Phase.COPY:
            self.ingest_range(msg.pairs)
        elif msg.phase is Phase.CLEANUP:
            self.drop_range(msg.range)

    def _check_capacity(self) -> None:
        if self.capacity is not None and len(self.engine) > self.capacity:
            self.overflowed = True

    # -- packet shim -----------------------------------------------------------
    def handle_packet(self, pkt: Packet) -> Handled:
        kv = pkt.kv
        if kv is None:
            self.dropped += 1
            return Handled([], 0)
        self.handled += 1
        if pkt.chain is None:
            return self._coordinate(pkt)
        if not pkt.chain.ips:
            self.dropped += 1
            return Handled([], 0)
        return self._serve(pkt, None, 0)

    def _lookup(self, key: int) -> Record:
        if self.directory is None:
            raise LookupError(f"{self.node} holds no directory")
        self.lookups += 1
        return self.directory().locate(self.matching_value(key))[1]

    def _coordinate(self, pkt: Packet) -> Handled:
        """Server-driven coordinator: resolve the target and forward (or serve)."""
        if self.directory is None:
            self.dropped += 1
            return Handled([], 0)
        kv = pkt.kv
        client = pkt.ip.src_ip
        if kv.op_code == OP_RANGE:
            directory = self.directory()
            self.lookups += 1
            out: list[Packet] = []
            served = False
            rng = SubRange(kv.key, kv.end_key_or_hash)
            for _, rec in directory.overlapping(rng):
                part = rng.intersect(rec.subrange)
                sub = replace(pkt, ip=replace(pkt.ip, tos=TOS_PROCESSED, dst_ip=rec.chain.tail.ip),
                              kv=replace(kv, key=part.start, end_key_or_hash=part.end),
                              chain=ChainHeader((client,)))
                if rec.chain.tail.id == self.node.id:
                    out.extend(self._serve(sub, rec, 0).out)
                    served = True
                else:
                    out.append(sub)
            return Handled(out, 1, not served)
        rec = self._lookup(kv.key)
        if kv.op_code == OP_GET:
            target, ips = rec.chain.tail, (client,)
        else:
            target = rec.chain.head
            ips = (UNRESOLVED_IP,) * (rec.chain.length - 1) + (client,)
        fwd = replace(pkt, ip=replace(pkt.ip, tos=TOS_PROCESSED, dst_ip=target.ip),
                      chain=ChainHeader(ips))
        if target.id == self.node.id:
            return self._serve(fwd, rec, 1)
        return Handled([fwd], 1, True)

    def _redirect_for(self, key: int) -> Redirect | None:
        if not self.redirects:
            return None
        mv = self.matching_value(key)
        for r in self.redirects:
            if mv in r.range:
                return r
        return None

    def _serve(self, pkt: Packet, rec: Record | None, lookups: int) -> Handled:
        kv = pkt.kv
        op = kv.op_code
        ips = pkt.chain.ips
        redirect = self._redirect_for(kv.key)
        if redirect is not None:
            if redirect.kind == "replace":
                return Handled([pkt.with_ip(dst_ip=redirect.target.ip)], lookups)
            if len(ips) == 1:
                if op in (OP_PUT, OP_DEL):
                    self._apply(pkt)
                return Handled([pkt.with_ip(dst_ip=redirect.target.ip)], lookups)
        if op == OP_GET:
            value = self.engine.get(kv.key)
            status = STATUS_OK if value is not None else STATUS_NOT_FOUND
            reply = Reply(kv.request_id, OP_GET, status, value=value or b"")
            return Handled([reply_packet(self.node.ip, ips[-1], reply)], lookups)
        if op == OP_RANGE:
            bounds = SubRange(kv.key, kv.end_key_or_hash)
            reply = Reply(kv.request_id, OP_RANGE, STATUS_OK, bounds=bounds,
                          pairs=tuple(self.engine.scan(bounds.start, bounds.end)))
            return Handled([reply_packet(self.node.ip, ips[-1], reply)], lookups)
        self._apply(pkt)
        if len(ips) == 1:
            ack = Reply(kv.request_id, op, STATUS_OK)
            return Handled([reply_packet(self.node.ip, ips[0], ack)], lookups)
        nxt = ips[0]
        if nxt == UNRESOLVED_IP:
            if rec is None:
                rec = self._lookup(kv.key)
                lookups += 1
            succ = rec.chain.successors(self.node) if self.node in rec.chain else ()
            if not succ:
                ack = Reply(kv.request_id, op, STATUS_OK)
                return Handled([reply_packet(self.node.ip, ips[-1], ack)], lookups)
            nxt = succ[0].ip
        fwd = replace(pkt, ip=replace(pkt.ip, dst_ip=nxt), chain=ChainHeader(ips[1:]))
        return Handled([fwd], lookups)

    def _apply(self, pkt: Packet) -> None:
        kv = pkt.kv
        if kv.op_code == OP_PUT:
            value, _ = parse_value_payload(pkt.payload)
            self.engine.put(kv.key, value)
            self._check_capacity()
        elif kv.op_code == OP_DEL:
            self.engine.delete(kv.key)
