"""Deterministic discrete-event simulation of a TurboKV cluster.

Events live in one heap keyed by ``(time, seq)``; ``seq`` is an insertion
counter, so a run is a pure function of its spec and seeds. Switches and
storage nodes are the objects from :mod:`turbokv.switch` and
:mod:`turbokv.storage`; this module supplies links, time, clients and the
three coordination modes.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

from sortedcontainers import SortedDict

from .controller import Controller, SwitchView
from .keys import (ChainSpec, Directory, NodeId, PartitionMode, SubRange, build_initial_directory,
                   make_nodes)
from .storage import NodeState
from .switch import AGG, CORE, RECIRCULATE, TOR, Switch, hash_key, scan_cover
from .wire import (OP_DEL, OP_GET, OP_NAMES, OP_PUT, OP_RANGE, STATUS_NOT_FOUND, STATUS_OK,
                   TOS_HASH, TOS_PLAIN, TOS_PROCESSED, TOS_RANGE, UNRESOLVED_IP, decode,
                   decode_reply, encode, request_packet)
from .workload import Op, OpStream, WorkloadSpec

OP_CODE = {"get": OP_GET, "put": OP_PUT, "del": OP_DEL, "range": OP_RANGE}

SERVICE_VIP = (10 << 24) | (254 << 16) | 1  # in-switch requests; switches route on the key
COORD_VIP = (10 << 24) | (254 << 16) | 2    # server-driven load-balancer address
CLIENT_RACK = 250


class SimError(RuntimeError):
    pass


class CoordinationMode(enum.Enum):
    IN_SWITCH = "InSwitch"
    SERVER_DRIVEN = "ServerDriven"
    CLIENT_DRIVEN_IDEAL = "ClientDrivenIdeal"

    @classmethod
    def parse(cls, text: str) -> "CoordinationMode":
        for m in cls:
            if m.value.lower() == text.strip().lower() or m.name.lower() == text.strip().lower():
                return m
        raise ValueError(f"unknown coordination mode {text!r}")


@dataclass(frozen=True)
class TopologySpec:
    racks: int = 1
    nodes_per_rack: int = 16
    clients: int = 4
    agg_switches: int = 0
    core_switches: int = 0
    link_latency: float = 100e-6
    switch_proc: float = 5e-6
    node_proc: float = 50e-6
    lookup_cost: float = 20e-6
    mode: CoordinationMode = CoordinationMode.IN_SWITCH
    capacity: int | None = None
    num_records: int = 128
    replication: int = 3
    partition: PartitionMode = PartitionMode.RANGE
    window: int = 1
    timeout: float = 0.0          # client retry timeout; 0 disables timers
    alpha: float = 1.5
    epoch_ops: int = 10_000
    rebalance: bool = True
    copy_delay: float = 1e-3
    drain_delay: float = 10e-3
    wire_check: bool = True
    lb_seed: int = 7

    def __post_init__(self):
        for name in ("link_latency", "switch_proc", "node_proc", "lookup_cost", "timeout",
                     "copy_delay", "drain_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.racks < 1 or self.nodes_per_rack < 1 or self.clients < 1 or self.window < 1:
            raise ValueError("racks, nodes_per_rack, clients and window must be >= 1")
        if self.racks > 1:
            if self.agg_switches < 1:
                raise ValueError("multi-rack topologies need at least one AGG switch")
            if self.core_switches == 0 and self.agg_switches > 1:
                raise ValueError("several AGG switches need a core layer to stay connected")
        if self.replication > self.racks * self.nodes_per_rack:
            raise ValueError(f"replication {self.replication} exceeds the node count")

    @property
    def node_count(self) -> int:
        return self.racks * self.nodes_per_rack


@dataclass
class OpSample:
    op: str
    latency_us: float
    delivery_hops: int
    messages: int
    client: int
    done_at: float


@dataclass
class RunMetrics:
    mode: CoordinationMode
    samples: list[OpSample] = field(default_factory=list)
    issued: int = 0
    completed: int = 0
    duration: float = 0.0
    drops: int = 0
    lost: int = 0
    retries: int = 0
    lookups: int = 0
    events: int = 0
    trace_digest: str = ""
    epoch_loads: list[dict[int, int]] = field(default_factory=list)

    OP_CSV_HEADER = "op,mode,latency_us,delivery_hops,messages"
    SUMMARY_CSV_HEADER = "mode,throughput_ops_per_s,mean,p50,p99"

    @property
    def pending(self) -> int:
        return self.issued - self.completed

    @property
    def throughput(self) -> float:
        return self.completed / self.duration if self.duration > 0 else 0.0

    def latencies(self, op: str | None = None) -> list[float]:
        return [s.latency_us for s in self.samples if op is None or s.op == op]

    def op_csv_lines(self) -> list[str]:
        m = self.mode.value
        return [f"{s.op},{m},{s.latency_us:.3f},{s.delivery_hops},{s.messages}" for s in self.samples]

    def summary_line(self) -> str:
        lat = self.latencies()
        return (f"{self.mode.value},{self.throughput:.3f},{mean(lat):.3f},"
                f"{percentile(lat, 50):.3f},{percentile(lat, 99):.3f}")


def mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def percentile(values, p: float) -> float:
    """Nearest-rank percentile."""
    data = sorted(values)
    if not data:
        return 0.0
    rank = max(1, math.ceil(p / 100 * len(data)))
    return data[min(rank, len(data)) - 1]


@dataclass
class _Pending:
    op: Op
    op_code: int
    sent_at: float
    rid: int
    issue_seq: int = 0
    hops: int = -1
    messages: int = 0
    served: list = field(default_factory=list)   # range sub-replies' bounds
    attempts: int = 1


@dataclass
class ClientState:
    index: int
    ip: int
    ops: Iterator[Op]
    window: int
    pending: dict[int, _Pending] = field(default_factory=dict)
    latencies: list[float] = field(default_factory=list)
    directory: Directory | None = None


@dataclass
class AckEntry:
    time: float
    seq: int
    kind: str
    key: int
    value: bytes | None = None
    bounds: SubRange | None = None
    pairs: tuple = ()
    client: int = 0
    issue_seq: int = 0


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: str = field(compare=False)
    data: tuple = field(compare=False, default=())


class Simulation:
    """A built cluster; feed it a workload with :meth:`run`."""

    def __init__(self, spec: TopologySpec):
        self.spec = spec
        self.now = 0.0
        self._seq = 0
        self._heap: list = []
        self._trace = hashlib.sha256()
        self.metrics = RunMetrics(spec.mode)
        self.ack_log: list[AckEntry] = []
        self.issued_writes: list[tuple[int, int, bytes | None]] = []  # (seq, key, value)
        self._rid = 0
        self._inflight: dict[int, tuple[ClientState, _Pending]] = {}
        self._budget = 0
        self._ops_since_epoch = 0
        self._overflow_pending: set[int] = set()
        self._epoch_base: dict[int, int] = {}
        self.strict_drops = spec.mode is CoordinationMode.IN_SWITCH
        self._build()

    # -- construction -----------------------------------------------------------
    def _build(self) -> None:
        spec = self.spec
        per_rack = [make_nodes(spec.nodes_per_rack, rack, rack * spec.nodes_per_rack)
                    for rack in range(spec.racks)]
        # rack-interleaved order so round-robin chains span racks
        self.node_order = [per_rack[r][i] for i in range(spec.nodes_per_rack) for r in range(spec.racks)]
        self.node_ids = {n.id: n for n in self.node_order}
        self.client_ips = [(10 << 24) | (CLIENT_RACK << 16) | (c + 1) for c in range(spec.clients)]
        directory = build_initial_directory(self.node_order, spec.num_records, spec.replication,
                                            spec.partition)

        self.switches: list[Switch] = []
        adj: dict[tuple, list[tuple]] = {}

        def add_switch(role, **kw) -> Switch:
            sw = Switch(len(self.switches), role, (10 << 24) | (253 << 16) | (len(self.switches) + 1),
                        seed=spec.lb_seed + len(self.switches), **kw)
            self.switches.append(sw)
            adj[("s", sw.id)] = []
            return sw

        def link(a, b):
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)

        single = spec.racks == 1
        tors = [add_switch(TOR, authoritative=single) for _ in range(spec.racks)]
        aggs = [add_switch(AGG) for _ in range(0 if single else spec.agg_switches)]
        cores = [add_switch(CORE) for _ in range(0 if single else spec.core_switches)]
        for rack, tor in enumerate(tors):
            for n in per_rack[rack]:
                link(("s", tor.id), ("n", n.id))
        for rack, tor in enumerate(tors[:len(tors) if aggs else 0]):
            link(("s", tor.id), ("s", aggs[rack % len(aggs)].id))
        for agg in aggs:
            for core in cores:
                link(("s", agg.id), ("s", core.id))
        if single:
            edge = tors[0]
        else:
            edge = add_switch(TOR)
            link(("s", edge.id), ("s", (cores[0] if cores else aggs[0]).id))
        self.edge = edge
        for c in range(spec.clients):
            link(("s", edge.id), ("c", c))
        self.adj = adj
        self.tors, self.aggs, self.cores = tors, aggs, cores
        self._ports_cache: dict[tuple, dict[tuple, int]] = {}
        self._switch_of_node = {n.id: tors[n.rack] for n in self.node_order}

        # racks indexed by each switch
        racks_of: dict[int, frozenset[int]] = {}
        for rack, tor in enumerate(tors):
            racks_of[tor.id] = frozenset([rack])
        for i, agg in enumerate(aggs):
            racks_of[agg.id] = frozenset(r for r in range(spec.racks) if r % len(aggs) == i)
        for core in cores:
            racks_of[core.id] = frozenset(range(spec.racks))
        if edge.id not in racks_of:
            racks_of[edge.id] = frozenset()

        for sw in self.switches:
            for n in self.node_order:
                sw.ipv4.add_host(n.ip, self.port_toward(sw, ("n", n.id)))
            for c, ip in enumerate(self.client_ips):
                sw.ipv4.add_host(ip, self.port_toward(sw, ("c", c)))
            if not single and sw is not (cores[0] if cores else aggs[0]):
                upstream = ("s", (cores[0] if cores else aggs[0]).id)
                sw.ipv4.add_host(SERVICE_VIP, self.port_toward(sw, upstream))
        edge.vip_pools[COORD_VIP] = [n.ip for n in self.node_order]

        self.nodes: dict[int, NodeState] = {
            n.id: NodeState(n, spec.partition, directory=lambda: self.controller.directory,
                            capacity=spec.capacity)
            for n in self.node_order}
        views = [SwitchView(sw, racks_of[sw.id],
                            (lambda s: (lambda node: self.port_toward(s, ("n", node.id))))(sw))
                 for sw in self.switches]
        self.controller = Controller(directory, self.nodes, views, alpha=spec.alpha,
                                     scheduler=self.call_later, copy_delay=spec.copy_delay,
                                     drain_delay=spec.drain_delay)
        self.controller.install()
        self._node_busy: dict[int, bool] = {n: False for n in self.nodes}
        self._node_queue: dict[int, deque] = {n: deque() for n in self.nodes}

    def _distances(self, target: tuple) -> dict[tuple, int]:
        dist = {target: 0}
        q = deque([target])
        while q:
            cur = q.popleft()
            for nb in self.adj[cur]:
                if nb not in dist:
                    dist[nb] = dist[cur] + 1
                    q.append(nb)
        return dist

    def port_toward(self, sw: Switch, target: tuple) -> int:
        """Lowest-numbered egress port on a shortest path from ``sw`` to ``target``."""
        ports = self._ports_cache.get(target)
        if ports is None:
            dist = self._distances(target)
            ports = {}
            for ent, nbs in self.adj.items():
                if ent[0] == "s" and ent in dist and dist[ent] > 0:
                    ports[ent] = next(i for i, nb in enumerate(nbs) if dist.get(nb) == dist[ent] - 1)
            self._ports_cache[target] = ports
        try:
            return ports[("s", sw.id)]
        except KeyError:
            raise SimError(f"{target} unreachable from {sw!r}") from None

    @property
    def directory(self) -> Directory:
        return self.controller.directory

    def node(self, node_id: int) -> NodeState:
        return self.nodes[node_id]

    def node_for_ip(self, ip: int) -> NodeState | None:
        for st in self.nodes.values():
            if st.node.ip == ip:
                return st
        return None

    # -- event loop ---------------------------------------------------------------
    def _push(self, t: float, kind: str, data: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, data))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self._push(self.now + delay, "call", (fn,))

    def call_at(self, t: float, fn: Callable[[], None]) -> None:
        self._push(max(t, self.now), "call", (fn,))

    def _send(self, ent: tuple, port: int, pkt, meta: tuple, delay: float = 0.0) -> None:
        nb = self.adj[ent][port]
        if self.spec.wire_check:
            pkt = decode(encode(pkt))
        hops, origin = meta
        self._push(self.now + delay + self.spec.link_latency, "deliver", (nb, pkt, (hops + 1, origin)))

    def step(self) -> bool:
        if not self._heap:
            return False
        t, seq, kind, data = heapq.heappop(self._heap)
        self.now = t
        self.metrics.events += 1
        self._trace.update(f"{t:.9f}{seq}{kind}".encode())
        if kind == "deliver":
            ent, pkt, meta = data
            if ent[0] == "s":
                self._at_switch(self.switches[ent[1]], pkt, meta)
            elif ent[0] == "n":
                self._at_node(ent[1], pkt, meta)
            else:
                self._at_client(self.clients[ent[1]], pkt, meta)
        elif kind == "done":
            self._node_done(*data)
        elif kind == "timer":
            self._timeout(*data)
        else:
            data[0]()
        return True

    def run_until_idle(self, limit: float | None = None) -> None:
        while self._heap and (limit is None or self._heap[0][0] <= limit):
            self.step()

    # -- switches -----------------------------------------------------------------
    def _at_switch(self, sw: Switch, pkt, meta) -> None:
        if sw.failed:
            self.metrics.lost += 1
            return
        before = sw.drops
        out = sw.route(pkt)
        if sw.drops > before:
            self.metrics.drops += sw.drops - before
            if self.strict_drops:
                raise SimError(f"{sw!r} dropped a packet to {pkt.ip.dst_ip:#x} under in-switch mode")
        ent = ("s", sw.id)
        for port, p in out:
            if port == RECIRCULATE:
                self._push(self.now + self.spec.switch_proc, "deliver", (ent, p, meta))
            else:
                self._send(ent, port, p, meta, self.spec.switch_proc)

    # -- storage nodes ------------------------------------------------------------
    def _at_node(self, nid: int, pkt, meta) -> None:
        st = self.nodes[nid]
        if not st.alive:
            self.metrics.lost += 1
            return
        self._count_message(pkt)
        self._node_queue[nid].append((pkt, meta))
        if not self._node_busy[nid]:
            self._start_service(nid)

    def _start_service(self, nid: int) -> None:
        st = self.nodes[nid]
        pkt, (hops, origin) = self._node_queue[nid].popleft()
        self._node_busy[nid] = True
        res = st.handle_packet(pkt)
        if pkt.kv is not None and not res.coordinated:
            self._note_delivery(pkt.kv.request_id, hops)
        self.metrics.lookups += res.lookups
        cost = self.spec.node_proc + res.lookups * self.spec.lookup_cost
        self._push(self.now + cost, "done", (nid, res.out, hops))
        if st.overflowed and nid not in self._overflow_pending:
            self._overflow_pending.add(nid)
            self.call_later(cost, lambda: self._overflow(nid))

    def _node_done(self, nid: int, out: list, hops: int) -> None:
        st = self.nodes[nid]
        self._node_busy[nid] = False
        if not st.alive:
            return
        ent = ("n", nid)
        for p in out:
            origin = self.now if p.kv is None else 0.0
            self._send(ent, 0, p, (hops if p.kv is not None else 0, origin))
        if self._node_queue[nid]:
            self._start_service(nid)

    def _overflow(self, nid: int) -> None:
        self._overflow_pending.discard(nid)
        st = self.nodes[nid]
        if st.alive and st.overflowed and not self.controller.active_jobs:
            self.controller.handle_capacity_overflow(st.node)

    # -- failures -----------------------------------------------------------------
    def kill_node(self, node_id: int) -> None:
        st = self.nodes[node_id]
        st.alive = False
        self.metrics.lost += len(self._node_queue[node_id])
        self._node_queue[node_id].clear()
        self._drop_from_pools(st.node.ip)
        self.controller.handle_node_failure(st.node)

    def _drop_from_pools(self, ip: int) -> None:
        for sw in self.switches:
            for vip, pool in sw.vip_pools.items():
                sw.vip_pools[vip] = [x for x in pool if x != ip]

    def fail_switch(self, switch_id: int) -> None:
        sw = self.switches[switch_id]
        rack_nodes = [n for n in self.node_order if self._switch_of_node[n.id] is sw]
        self.controller.handle_switch_failure(sw, rack_nodes)
        sw.failed = True
        for n in rack_nodes:
            self.nodes[n.id].alive = False
            self._drop_from_pools(n.ip)
            self.metrics.lost += len(self._node_queue[n.id])
            self._node_queue[n.id].clear()

    # -- clients --------------------------------------------------------------------
    def _count_message(self, pkt) -> None:
        rid = pkt.kv.request_id if pkt.kv is not None else None
        entry = self._inflight.get(rid)
        if entry is not None:
            entry[1].messages += 1

    def _note_delivery(self, rid: int, hops: int) -> None:
        entry = self._inflight.get(rid)
        if entry is not None and entry[1].hops < 0:
            entry[1].hops = hops

    def _new_rid(self) -> int:
        self._rid += 1
        return self._rid

    def _issue(self, client: ClientState) -> None:
        while len(client.pending) < client.window and self.metrics.issued < self._budget:
            op = next(client.ops)
            self.metrics.issued += 1
            p = _Pending(op, OP_CODE[op.kind], self.now, self._new_rid(), self.metrics.issued)
            if op.kind in ("put", "del"):
                self.issued_writes.append((p.issue_seq, op.key, op.value if op.kind == "put" else None))
            self._transmit(client, p)

    def _transmit(self, client: ClientState, p: _Pending) -> None:
        client.pending[p.rid] = p
        self._inflight[p.rid] = (client, p)
        for pkt in self._requests(client, p):
            self._send(("c", client.index), 0, pkt, (0, 0.0))
        if self.spec.timeout > 0:
            self._push(self.now + self.spec.timeout, "timer", (client.index, p.rid))

    def _requests(self, client: ClientState, p: _Pending) -> list:
        op, mode = p.op, self.spec.mode
        hashed = self.spec.partition is PartitionMode.HASH
        value = op.value if op.kind == "put" else None
        end = op.end if op.kind == "range" else (hash_key(op.key) if hashed else 0)
        if mode is CoordinationMode.IN_SWITCH:
            tos = TOS_HASH if hashed else TOS_RANGE
            return [request_packet(p.op_code, op.key, client.ip, SERVICE_VIP, end_key=end,
                                   request_id=p.rid, tos=tos, value=value)]
        if mode is CoordinationMode.SERVER_DRIVEN:
            return [request_packet(p.op_code, op.key, client.ip, COORD_VIP, end_key=end,
                                   request_id=p.rid, tos=TOS_PLAIN, value=value)]
        directory = self.directory  # the ideal client always holds the current directory
        if op.kind == "range":
            out = []
            for _, rec in directory.overlapping(SubRange(op.key, op.end)):
                part = SubRange(op.key, op.end).intersect(rec.subrange)
                out.append(request_packet(OP_RANGE, part.start, client.ip, rec.chain.tail.ip,
                                          end_key=part.end, request_id=p.rid, tos=TOS_PROCESSED,
                                          chain=(client.ip,)))
            return out
        mv = hash_key(op.key) if hashed else op.key
        chain = directory.locate(mv)[1].chain
        if op.kind == "get":
            target, ips = chain.tail, (client.ip,)
        else:
            target, ips = chain.head, (UNRESOLVED_IP,) * (chain.length - 1) + (client.ip,)
        return [request_packet(p.op_code, op.key, client.ip, target.ip, end_key=end,
                               request_id=p.rid, tos=TOS_PROCESSED, value=value, chain=ips)]

    def _timeout(self, cidx: int, rid: int) -> None:
        client = self.clients[cidx]
        p = client.pending.pop(rid, None)
        if p is None:
            return
        self._inflight.pop(rid, None)
        self.metrics.retries += 1
        p.rid = self._new_rid()
        p.attempts += 1
        p.served = []
        p.hops = -1
        self._transmit(client, p)

    def _at_client(self, client: ClientState, pkt, meta) -> None:
        reply = decode_reply(pkt.payload)
        p = client.pending.get(reply.request_id)
        if p is None:
            return  # reply to a retried attempt
        p.messages += 1
        _, origin = meta
        if reply.op_code == OP_RANGE and reply.status == STATUS_OK:
            self.ack_log.append(AckEntry(origin, self._seq, "range", reply.bounds.start,
                                         bounds=reply.bounds, pairs=reply.pairs, client=client.index))
            p.served.append(reply.bounds)
            if not scan_cover(SubRange(p.op.key, p.op.end), p.served):
                return
        elif reply.op_code == OP_GET:
            value = reply.value if reply.status == STATUS_OK else None
            self.ack_log.append(AckEntry(origin, self._seq, "get", p.op.key, value, client=client.index))
        elif reply.op_code in (OP_PUT, OP_DEL) and reply.status == STATUS_OK:
            value = p.op.value if reply.op_code == OP_PUT else None
            self.ack_log.append(AckEntry(origin, self._seq, p.op.kind, p.op.key, value,
                                         client=client.index, issue_seq=p.issue_seq))
        del client.pending[reply.request_id]
        self._inflight.pop(reply.request_id, None)
        latency = (self.now - p.sent_at) * 1e6
        client.latencies.append(latency)
        self.metrics.samples.append(OpSample(p.op.kind, latency, max(p.hops, 0), p.messages,
                                             client.index, self.now))
        self.metrics.completed += 1
        self.metrics.duration = self.now
        self._ops_since_epoch += 1
        if self._ops_since_epoch >= self.spec.epoch_ops:
            self._ops_since_epoch = 0
            self._end_epoch()
        self._issue(client)

    def _end_epoch(self) -> None:
        handled = {nid: st.handled for nid, st in self.nodes.items()}
        self.metrics.epoch_loads.append({nid: handled[nid] - self._epoch_base.get(nid, 0)
                                         for nid in handled})
        self._epoch_base = handled
        self.controller.on_epoch(rebalance=self.spec.rebalance)

    # -- workload -------------------------------------------------------------------
    def preload(self, pairs) -> None:
        """Bulk-load ``pairs`` into every replica of their records, outside simulated time."""
        directory = self.directory
        hashed = self.spec.partition is PartitionMode.HASH
        for k, v in pairs:
            for n in directory.locate(hash_key(k) if hashed else k)[1].chain:
                self.nodes[n.id].engine.put(k, v)
        self.preloaded = dict(pairs)

    def attach(self, stream: OpStream) -> None:
        self.stream = stream
        self.clients = [ClientState(c, ip, stream.client_ops(c), self.spec.window)
                        for c, ip in enumerate(self.client_ips)]

    def run(self, ops: int, *, until: float | None = None) -> RunMetrics:
        """Issue ``ops`` more operations (closed loop) and run until they complete."""
        if not hasattr(self, "clients"):
            raise SimError("attach a workload before running")
        self._budget += ops
        for client in self.clients:
            self._issue(client)
        self.run_until_idle(until)
        m = self.metrics
        m.trace_digest = self._trace.hexdigest()
        return m

    # -- checks ----------------------------------------------------------------------
    def oracle_mismatches(self) -> list[str]:
        """Replay acks in commit order against a sequential map; report disagreements."""
        oracle = SortedDict(getattr(self, "preloaded", {}))
        bad = []
        for e in sorted(self.ack_log, key=lambda e: (e.time, e.seq)):
            if e.kind == "put":
                oracle[e.key] = e.value
            elif e.kind == "del":
                oracle.pop(e.key, None)
            elif e.kind == "get":
                if oracle.get(e.key) != e.value:
                    bad.append(f"get {e.key:#x} at {e.time:.6f}")
            else:
                want = [(k, oracle[k]) for k in oracle.irange(e.bounds.start, e.bounds.end)]
                if list(e.pairs) != want:
                    bad.append(f"range {e.bounds} at {e.time:.6f}")
        self.oracle = oracle
        return bad

    def store_mismatches(self) -> list[str]:
        """Every replica of every record must hold exactly the oracle's pairs for it."""
        if not hasattr(self, "oracle"):
            self.oracle_mismatches()
        bad = []
        for rec in self.directory:
            want = [(k, v) for k, v in self.oracle.items()
                    if (hash_key(k) if self.spec.partition is PartitionMode.HASH else k) in rec.subrange]
            for n in rec.chain:
                if sorted(self.nodes[n.id].pairs_in(rec.subrange)) != sorted(want):
                    bad.append(f"{n} {rec.subrange}")
        return bad

    def durability_violations(self) -> list[str]:
        """Acked writes must survive.

        A key's value at its tail must be its last acknowledged write, or a
        write issued no earlier than that one (concurrent or retried attempts
        may legitimately land after it).
        """
        last_ack: dict[int, AckEntry] = {}
        for e in sorted(self.ack_log, key=lambda e: (e.time, e.seq)):
            if e.kind in ("put", "del"):
                last_ack[e.key] = e
        bad = []
        hashed = self.spec.partition is PartitionMode.HASH
        keys = set(getattr(self, "preloaded", {})) | set(last_ack)
        for key in sorted(keys):
            ack = last_ack.get(key)
            want = ack.value if ack else self.preloaded.get(key)
            since = ack.issue_seq if ack else -1
            allowed = {want} | {v for seq, k, v in self.issued_writes if k == key and seq >= since}
            chain = self.directory.locate(hash_key(key) if hashed else key)[1].chain
            if self.nodes[chain.tail.id].engine.get(key) not in allowed:
                bad.append(f"{key:#x}")
        return bad

    def chain_lengths(self) -> Counter:
        return Counter(rec.chain.length for rec in self.directory)


def build_topology(spec: TopologySpec) -> Simulation:
    return Simulation(spec)


def run_workload(spec: TopologySpec, workload: WorkloadSpec, ops: int) -> tuple[Simulation, RunMetrics]:
    sim = Simulation(spec)
    stream = OpStream(workload)
    sim.preload(stream.load_phase())
    sim.attach(stream)
    return sim, sim.run(ops)

