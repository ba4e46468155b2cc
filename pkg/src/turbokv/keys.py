"""Keys, sub-ranges, replica chains and the global directory.

Keys and matching values are plain Python ints in ``[0, 2**128 - 1]``; the
16-byte big-endian form is only materialised at the wire boundary, so
numeric order and byte-lexicographic order coincide by construction.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

KEY_BYTES = 16
KEY_BITS = 8 * KEY_BYTES
KEY_SPACE = 1 << KEY_BITS
KEY_MAX = KEY_SPACE - 1


class DirectoryError(ValueError):
    """Raised when a directory operation would break an invariant."""


class PartitionMode(enum.Enum):
    RANGE = "range"
    HASH = "hash"


def key_to_bytes(value: int) -> bytes:
    return value.to_bytes(KEY_BYTES, "big")


def key_from_bytes(raw: bytes) -> int:
    if len(raw) != KEY_BYTES:
        raise ValueError(f"keys are {KEY_BYTES} bytes, got {len(raw)}")
    return int.from_bytes(raw, "big")


def key_hex(value: int) -> str:
    return f"{value:032x}"


@dataclass(frozen=True, order=True)
class SubRange:
    """Inclusive interval ``[start, end]`` of the key (or hash) space."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end <= KEY_MAX:
            raise DirectoryError(f"invalid sub-range [{self.start}, {self.end}]")

    def __contains__(self, value: int) -> bool:
        return self.start <= value <= self.end

    @property
    def width(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "SubRange") -> bool:
        return self.start <= other.end and other.start <= self.end

    def intersect(self, other: "SubRange") -> "SubRange | None":
        lo, hi = max(self.start, other.start), min(self.end, other.end)
        return SubRange(lo, hi) if lo <= hi else None

    def halves(self) -> tuple["SubRange", "SubRange"]:
        if self.start == self.end:
            raise DirectoryError("a width-1 sub-range cannot be split")
        mid = self.start + (self.end - self.start) // 2
        return SubRange(self.start, mid), SubRange(mid + 1, self.end)

    def __str__(self):
        return f"[{key_hex(self.start)}, {key_hex(self.end)}]"


FULL_RANGE = SubRange(0, KEY_MAX)


def ip_to_str(ip: int) -> str:
    return ".".join(str((ip >> s) & 0xFF) for s in (24, 16, 8, 0))


def ip_from_str(text: str) -> int:
    parts = [int(p) for p in text.split(".")]
    if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
        raise ValueError(f"bad ip {text!r}")
    return (parts[0] << 24) | (parts[1] << 16) | (parts[2] << 8) | parts[3]


@dataclass(frozen=True, order=True)
class NodeId:
    id: int
    ip: int
    rack: int = 0

    def __str__(self):
        return f"S{self.id}"


def make_nodes(count: int, rack: int = 0, first_id: int = 0) -> list[NodeId]:
    """Storage nodes numbered from ``first_id``; address 10.<rack>.x.y holds id + 1."""
    out = []
    for i in range(first_id, first_id + count):
        ip = (10 << 24) | ((rack & 0xFF) << 16) | ((i + 1) & 0xFFFF)
        out.append(NodeId(i, ip, rack))
    return out


@dataclass(frozen=True)
class ChainSpec:
    """Ordered replica list; ``nodes[0]`` is the head and ``nodes[-1]`` the tail."""

    nodes: tuple[NodeId, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise DirectoryError("a chain needs at least one node")
        if len({n.id for n in self.nodes}) != len(self.nodes):
            raise DirectoryError(f"chain nodes must be distinct: {self}")

    @property
    def head(self) -> NodeId:
        return self.nodes[0]

    @property
    def tail(self) -> NodeId:
        return self.nodes[-1]

    @property
    def length(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[NodeId]:
        return iter(self.nodes)

    def __contains__(self, node: NodeId) -> bool:
        return any(n.id == node.id for n in self.nodes)

    def position(self, node: NodeId) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node.id:
                return i
        raise DirectoryError(f"{node} not in chain {self}")

    def successors(self, node: NodeId) -> tuple[NodeId, ...]:
        return self.nodes[self.position(node) + 1:]

    def without(self, node: NodeId) -> "ChainSpec":
        return ChainSpec(tuple(n for n in self.nodes if n.id != node.id))

    def replaced(self, old: NodeId, new: NodeId) -> "ChainSpec":
        return ChainSpec(tuple(new if n.id == old.id else n for n in self.nodes))

    def appended(self, node: NodeId) -> "ChainSpec":
        return ChainSpec(self.nodes + (node,))

    def __str__(self):
        return "[" + ",".join(str(n) for n in self.nodes) + "]"


@dataclass(frozen=True)
class Record:
    subrange: SubRange
    chain: ChainSpec


@dataclass(frozen=True)
class Directory:
    """The full partition-management table: sorted, disjoint, covering records."""

    mode: PartitionMode
    records: tuple[Record, ...]
    replication_factor: int
    _starts: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        self.validate()
        object.__setattr__(self, "_starts", [rec.subrange.start for rec in self.records])

    def validate(self) -> None:
        recs = self.records
        if not recs:
            raise DirectoryError("directory has no records")
        if recs[0].subrange.start != 0 or recs[-1].subrange.end != KEY_MAX:
            raise DirectoryError("directory does not cover the key space")
        for a, b in zip(recs, recs[1:]):
            if a.subrange.end + 1 != b.subrange.start:
                raise DirectoryError(f"gap or overlap between {a.subrange} and {b.subrange}")
        for rec in recs:
            if rec.chain.length > self.replication_factor:
                raise DirectoryError(f"chain {rec.chain} longer than r={self.replication_factor}")

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, index: int) -> Record:
        return self.records[index]

    def locate(self, mv: int) -> tuple[int, Record]:
        """Index and record of the sub-range containing matching value ``mv``."""
        if not 0 <= mv <= KEY_MAX:
            raise DirectoryError(f"matching value {mv} outside the key space")
        i = bisect.bisect_right(self._starts, mv) - 1
        rec = self.records[i]
        if mv not in rec.subrange:
            raise DirectoryError(f"matching value {mv} not covered (corrupted directory)")
        return i, rec

    def index_of(self, subrange: SubRange) -> int:
        i = bisect.bisect_left(self._starts, subrange.start)
        if i < len(self.records) and self.records[i].subrange == subrange:
            return i
        raise DirectoryError(f"no record {subrange}")

    def overlapping(self, rng: SubRange) -> list[tuple[int, Record]]:
        first, _ = self.locate(rng.start)
        last, _ = self.locate(rng.end)
        return [(i, self.records[i]) for i in range(first, last + 1)]

    def split(self, index: int) -> "Directory":
        rec = self.records[index]
        lo, hi = rec.subrange.halves()
        recs = list(self.records)
        recs[index:index + 1] = [Record(lo, rec.chain), Record(hi, rec.chain)]
        return Directory(self.mode, recs, self.replication_factor)

    def with_chain(self, index: int, chain: ChainSpec) -> "Directory":
        recs = list(self.records)
        recs[index] = Record(recs[index].subrange, chain)
        return Directory(self.mode, recs, self.replication_factor)

    def nodes(self) -> set[NodeId]:
        return {n for rec in self.records for n in rec.chain}

    def role_counts(self) -> dict[NodeId, tuple[int, int, int]]:
        """Per node: (times head, times middle, times tail)."""
        counts: dict[NodeId, list[int]] = {}
        for rec in self.records:
            last = rec.chain.length - 1
            for pos, node in enumerate(rec.chain):
                c = counts.setdefault(node, [0, 0, 0])
                if pos == last and last > 0:
                    c[2] += 1
                elif pos == 0:
                    c[0] += 1
                    if last == 0:
                        c[2] += 1
                else:
                    c[1] += 1
        return {n: tuple(c) for n, c in counts.items()}

    def dumps(self) -> str:
        lines = []
        for rec in self.records:
            ids = ",".join(str(n.id) for n in rec.chain)
            lines.append(f"{key_hex(rec.subrange.start)},{key_hex(rec.subrange.end)},{ids}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, nodes: Iterable[NodeId], mode: PartitionMode = PartitionMode.RANGE,
              replication_factor: int | None = None) -> "Directory":
        by_id = {n.id: n for n in nodes}
        recs = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            start, end, *ids = line.split(",")
            chain = ChainSpec(tuple(by_id[int(i)] for i in ids))
            recs.append(Record(SubRange(int(start, 16), int(end, 16)), chain))
        r = replication_factor or max(rec.chain.length for rec in recs)
        return cls(mode, recs, r)


def equal_ranges(num_ranges: int) -> list[SubRange]:
    if num_ranges < 1:
        raise DirectoryError("need at least one sub-range")
    width = KEY_SPACE // num_ranges
    out = [SubRange(i * width, (i + 1) * width - 1) for i in range(num_ranges)]
    out[-1] = SubRange(out[-1].start, KEY_MAX)
    return out


def build_initial_directory(nodes: Sequence[NodeId], num_ranges: int, r: int,
                            mode: PartitionMode = PartitionMode.RANGE) -> Directory:
    """Equal-width sub-ranges with chains assigned round-robin.

    Record ``i`` gets ``nodes[i], nodes[i+1], ..., nodes[i+r-1]`` (mod N), so
    every node takes the head, each middle and the tail role equally often
    whenever ``num_ranges`` is a multiple of ``len(nodes)``.
    """
    n = len(nodes)
    if r < 1:
        raise DirectoryError("replication factor must be >= 1")
    if r > n:
        raise DirectoryError(f"cannot form chains of {r} distinct nodes from {n} nodes")
    recs = []
    for i, rng in enumerate(equal_ranges(num_ranges)):
        chain = ChainSpec(tuple(nodes[(i + j) % n] for j in range(r)))
        recs.append(Record(rng, chain))
    return Directory(mode, recs, r)


def locate_linear(directory: Directory, mv: int) -> int:
    """Linear-scan reference for :meth:`Directory.locate`."""
    for i, rec in enumerate(directory.records):
        if rec.subrange.start <= mv <= rec.subrange.end:
            return i
    raise DirectoryError("uncovered matching value")
