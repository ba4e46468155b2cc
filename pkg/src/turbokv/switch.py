"""Switch data plane: partition tables, register arrays and key-based routing.

A :class:`Switch` is a pure packet transformer. ``route`` takes one decoded
packet and returns ``(egress_port, packet)`` pairs; the simulator owns links
and time. Egress port :data:`RECIRCULATE` sends a packet back to ingress.
"""

from __future__ import annotations

import bisect
import functools
import random
from dataclasses import dataclass, replace
from typing import Generic, Iterable, TypeVar

from .keys import KEY_MAX, SubRange, key_from_bytes, key_hex, key_to_bytes
from .ripemd import ripemd160
from .wire import (OP_DEL, OP_GET, OP_PUT, OP_RANGE, STATUS_UNSUPPORTED, TOS_HASH,
                   TOS_PROCESSED, TOS_RANGE, ChainHeader, Packet, Reply, reply_packet)

RECIRCULATE = -1

TOR = "tor"
AGG = "agg"
CORE = "core"

# Deliberate defects switched on by the audit's mutation check.
FAULTS: set[str] = set()


class TableError(ValueError):
    """Rejected control-plane update."""


class DirectoryFault(RuntimeError):
    """A switch that owns the whole key space missed a lookup."""


@functools.lru_cache(maxsize=1 << 17)
def hash_key(key: int) -> int:
    """Matching value for hash partitioning: RIPEMD-160 of the 16 key bytes, first 16 bytes."""
    return key_from_bytes(ripemd160(key_to_bytes(key))[:16])


@dataclass(frozen=True)
class TableEntry:
    match: SubRange
    chain_indexes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "chain_indexes", tuple(self.chain_indexes))
        if not self.chain_indexes:
            raise TableError("entry needs a non-empty chain")

    @property
    def length(self) -> int:
        return len(self.chain_indexes)


@dataclass(frozen=True)
class UplinkEntry:
    match: SubRange
    port_toward_head: int
    port_toward_tail: int


E = TypeVar("E", TableEntry, UplinkEntry)


class RangeTable(Generic[E]):
    """Sorted, disjoint range-match entries with per-entry read/write counters."""

    def __init__(self, kind: str = "range"):
        self.kind = kind
        self.entries: list[E] = []
        self._starts: list[int] = []
        self.read_count: list[int] = []
        self.write_count: list[int] = []

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def lookup(self, mv: int) -> tuple[int, E] | None:
        i = bisect.bisect_right(self._starts, mv) - 1
        if i >= 0:
            entry = self.entries[i]
            if mv <= entry.match.end:
                return i, entry
        return None

    def _fits(self, index: int, match: SubRange) -> bool:
        return all(not self.entries[j].match.overlaps(match)
                   for j in (index - 1, index) if 0 <= j < len(self.entries))

    def insert(self, entry: E) -> int:
        i = bisect.bisect_left(self._starts, entry.match.start)
        if not self._fits(i, entry.match):
            raise TableError(f"{entry.match} overlaps an existing entry")
        self.entries.insert(i, entry)
        self._starts.insert(i, entry.match.start)
        self.read_count.insert(i, 0)
        self.write_count.insert(i, 0)
        return i

    def remove(self, index: int) -> E:
        self._check_index(index)
        del self._starts[index]
        del self.read_count[index]
        del self.write_count[index]
        return self.entries.pop(index)

    def update(self, index: int, entry: E) -> None:
        self._check_index(index)
        lo = self.entries[index - 1].match if index > 0 else None
        hi = self.entries[index + 1].match if index + 1 < len(self.entries) else None
        if (lo and lo.overlaps(entry.match)) or (hi and hi.overlaps(entry.match)):
            raise TableError(f"{entry.match} overlaps a neighbouring entry")
        self.entries[index] = entry
        self._starts[index] = entry.match.start

    def clear(self) -> None:
        self.__init__(self.kind)

    def _check_index(self, index: int) -> None:
        if not 0 <= index < len(self.entries):
            raise TableError(f"no entry at index {index}")


class PartitionTable(RangeTable[TableEntry]):
    pass


class UplinkTable(RangeTable[UplinkEntry]):
    pass


class RegisterFile:
    """Parallel node-IP / node-port arrays indexed by storage-node register slot."""

    def __init__(self, size: int = 0):
        self.node_ip: list[int] = [0] * size
        self.node_port: list[int] = [-1] * size

    def __len__(self):
        return len(self.node_ip)

    def set(self, index: int, ip: int, port: int) -> None:
        if index < 0:
            raise TableError(f"invalid register index {index}")
        if index >= len(self.node_ip):
            grow = index + 1 - len(self.node_ip)
            self.node_ip.extend([0] * grow)
            self.node_port.extend([-1] * grow)
        self.node_ip[index] = ip
        self.node_port[index] = port

    def valid(self, index: int) -> bool:
        return 0 <= index < len(self.node_ip) and self.node_port[index] >= 0


class Ipv4Table:
    """Exact and longest-prefix routes to egress ports; misses hit the drop default."""

    def __init__(self):
        self._exact: dict[int, int] = {}
        self._prefixes: list[tuple[int, int, int]] = []  # (prefix_len, network, port)

    def add_host(self, ip: int, port: int) -> None:
        self._exact[ip] = port

    def add_prefix(self, network: int, prefix_len: int, port: int) -> None:
        mask = ((1 << prefix_len) - 1) << (32 - prefix_len) if prefix_len else 0
        self._prefixes.append((prefix_len, network & mask, port))
        self._prefixes.sort(key=lambda t: -t[0])

    def lookup(self, ip: int) -> int | None:
        port = self._exact.get(ip)
        if port is not None:
            return port
        for plen, net, p in self._prefixes:
            mask = ((1 << plen) - 1) << (32 - plen) if plen else 0
            if ip & mask == net:
                return p
        return None


@dataclass(frozen=True)
class StatsRow:
    entry_index: int
    match: SubRange
    reads: int
    writes: int


@dataclass(frozen=True)
class StatsReport:
    switch_id: int
    rows: tuple[StatsRow, ...]

    CSV_HEADER = "switch_id,entry_index,start_hex,end_hex,reads,writes"

    def csv_lines(self) -> list[str]:
        return [f"{self.switch_id},{r.entry_index},{key_hex(r.match.start)},{key_hex(r.match.end)},"
                f"{r.reads},{r.writes}" for r in self.rows]


def split_range(pkt: Packet, matched: SubRange) -> tuple[Packet, Packet | None]:
    """Egress range check: clip ``pkt`` to ``matched`` and build the remainder.

    The remainder keeps the original request header, starts right after the
    matched sub-range and is marked as a fresh range request so it re-enters
    key-based routing.
    """
    if pkt.kv.op_code != OP_RANGE or pkt.kv.end_key_or_hash <= matched.end:
        return pkt, None
    out = pkt.with_kv(end_key_or_hash=matched.end)
    cir = replace(pkt, kv=replace(pkt.kv, key=matched.end + 1), chain=None,
                  ip=replace(pkt.ip, tos=TOS_RANGE))
    return out, cir


class Switch:
    """One programmable switch (ToR, AGG or Core)."""

    def __init__(self, switch_id: int, role: str = TOR, ip: int = 0, *,
                 authoritative: bool = False, seed: int = 0):
        self.id = switch_id
        self.role = role
        self.ip = ip
        self.authoritative = authoritative
        self.range_table: RangeTable = PartitionTable("range") if role == TOR else UplinkTable("range")
        self.hash_table: RangeTable = PartitionTable("hash") if role == TOR else UplinkTable("hash")
        self.registers = RegisterFile()
        self.ipv4 = Ipv4Table()
        self.vip_pools: dict[int, list[int]] = {}
        self._lb_rng = random.Random(seed)
        self.key_hits = 0
        self.drops = 0
        self.recirculations = 0
        self.failed = False

    def __repr__(self):
        return f"Switch({self.role}{self.id})"

    # -- control plane --------------------------------------------------------
    def table(self, kind: str) -> RangeTable:
        return self.range_table if kind == "range" else self.hash_table

    def insert_entry(self, kind: str, entry) -> int:
        self._validate(entry)
        return self.table(kind).insert(entry)

    def remove_entry(self, kind: str, index: int):
        return self.table(kind).remove(index)

    def update_entry(self, kind: str, index: int, entry) -> None:
        self._validate(entry)
        self.table(kind).update(index, entry)

    def set_register(self, index: int, ip: int, port: int) -> None:
        self.registers.set(index, ip, port)

    def _validate(self, entry) -> None:
        if isinstance(entry, TableEntry):
            if self.role != TOR:
                raise TableError("only ToR switches hold chain entries")
            bad = [i for i in entry.chain_indexes if not self.registers.valid(i)]
            if bad:
                raise TableError(f"invalid register indexes {bad}")
        elif self.role == TOR:
            raise TableError("ToR switches hold chain entries, not uplink entries")

    def read_and_reset_counters(self) -> StatsReport:
        rows = []
        for table in (self.range_table, self.hash_table):
            for i, entry in enumerate(table.entries):
                rows.append(StatsRow(i, entry.match, table.read_count[i], table.write_count[i]))
            table.read_count = [0] * len(table.entries)
            table.write_count = [0] * len(table.entries)
        return StatsReport(self.id, tuple(rows))

    # -- data plane -----------------------------------------------------------
    def route(self, pkt: Packet, ingress_port: int = -1) -> list[tuple[int, Packet]]:
        kv = pkt.kv
        if kv is not None and pkt.ip.tos in (TOS_RANGE, TOS_HASH):
            if kv.op_code == OP_RANGE and pkt.ip.tos == TOS_HASH:
                return self._reject_hash_range(pkt)
            hashed = pkt.ip.tos == TOS_HASH
            table = self.hash_table if hashed else self.range_table
            mv = kv.end_key_or_hash if hashed else kv.key
            hit = table.lookup(mv)
            if hit is not None:
                if self.role == TOR:
                    return self._key_route(pkt, table, *hit)
                return self._uplink_route(pkt, hit[1])
            if self.authoritative:
                raise DirectoryFault(f"{self!r} missed matching value {key_hex(mv)}")
        return self._ipv4_route(pkt)

    def _key_route(self, pkt: Packet, table: RangeTable, index: int, entry: TableEntry):
        self.key_hits += 1
        kv = pkt.kv
        regs = self.registers
        client = pkt.ip.src_ip
        if kv.op_code in (OP_GET, OP_RANGE):
            table.read_count[index] += 1
            target = entry.chain_indexes[-1]
            ips = (client,)
        else:
            table.write_count[index] += 1
            target = entry.chain_indexes[0]
            ips = tuple(regs.node_ip[i] for i in entry.chain_indexes[1:]) + (client,)
        c_length = len(ips) + (1 if "chain-length" in FAULTS else 0)
        out = replace(pkt, ip=replace(pkt.ip, dst_ip=regs.node_ip[target], tos=TOS_PROCESSED),
                      chain=ChainHeader(ips, c_length))
        port = regs.node_port[target]
        if kv.op_code != OP_RANGE:
            return [(port, out)]
        pkt_out, _ = split_range(out, entry.match)
        _, pkt_cir = split_range(pkt, entry.match)
        if pkt_cir is None:
            return [(port, pkt_out)]
        self.recirculations += 1
        return [(port, pkt_out), (RECIRCULATE, pkt_cir)]

    def _uplink_route(self, pkt: Packet, entry: UplinkEntry):
        write = pkt.kv.op_code in (OP_PUT, OP_DEL)
        return [(entry.port_toward_head if write else entry.port_toward_tail, pkt)]

    def _ipv4_route(self, pkt: Packet):
        dst = pkt.ip.dst_ip
        pool = self.vip_pools.get(dst)
        if pool:
            dst = pool[self._lb_rng.randrange(len(pool))]
            pkt = pkt.with_ip(dst_ip=dst)
        port = self.ipv4.lookup(dst)
        if port is None:
            self.drops += 1
            return []
        return [(port, pkt)]

    def _reject_hash_range(self, pkt: Packet):
        reply = Reply(pkt.kv.request_id, OP_RANGE, STATUS_UNSUPPORTED)
        return self._ipv4_route(reply_packet(self.ip, pkt.ip.src_ip, reply))


def route_to_completion(switch: Switch, pkt: Packet, ingress_port: int = -1,
                        max_passes: int | None = None) -> list[tuple[int, Packet]]:
    """Route ``pkt`` and feed every recirculated packet back in until none remain."""
    limit = max_passes if max_passes is not None else max(1, len(switch.range_table)) + 1
    out: list[tuple[int, Packet]] = []
    pending = [pkt]
    passes = 0
    while pending:
        passes += 1
        if passes > limit:
            raise RuntimeError("recirculation exceeded the table size")
        for port, p in switch.route(pending.pop(0), ingress_port):
            if port == RECIRCULATE:
                pending.append(p)
            else:
                out.append((port, p))
    return out


def scan_cover(requested: SubRange, served: Iterable[SubRange]) -> bool:
    """True when ``served`` is a disjoint exact cover of ``requested``."""
    parts = sorted(served)
    if not parts or parts[0].start != requested.start or parts[-1].end != requested.end:
        return False
    return all(a.end + 1 == b.start for a, b in zip(parts, parts[1:]))


def full_key_range(entries: Iterable[SubRange]) -> bool:
    parts = sorted(entries)
    return bool(parts) and parts[0].start == 0 and parts[-1].end == KEY_MAX and all(
        a.end + 1 == b.start for a, b in zip(parts, parts[1:]))
