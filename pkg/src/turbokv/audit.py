"""Property suite behind ``turbokv audit``.

Each property builds its own small simulation and returns a
:class:`PropertyResult`. Only the chain-header property round-trips packets
through the wire codec, so a defect injected into chain-header construction
shows up there and nowhere else.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from . import switch as switch_mod
from .keys import SubRange
from .sim import CoordinationMode, SimError, Simulation, TopologySpec
from .switch import RECIRCULATE, full_key_range, scan_cover
from .wire import OP_RANGE, TOS_RANGE, WireError, request_packet
from .workload import OpStream, WorkloadSpec

SCALES = {"small": 2_000, "full": 20_000}
KNOWN_FAULTS = ("chain-length",)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _sim(ops: int, mix=(0.5, 0.4, 0.05, 0.05), wire_check=False, seed=3, **topo):
    sim = Simulation(TopologySpec(wire_check=wire_check, **topo))
    stream = OpStream(WorkloadSpec(record_count=2_000, mix=mix, seed=seed))
    sim.preload(stream.load_phase())
    sim.attach(stream)
    return sim, sim.run(ops)


def prop_coverage(ops: int) -> PropertyResult:
    sim = Simulation(TopologySpec(wire_check=False))
    tor = sim.tors[0]
    ok = full_key_range(e.match for e in tor.range_table.entries)
    problems = sim.controller.coherence_violations()
    return PropertyResult("coverage", ok and not problems,
                          f"{len(tor.range_table)} entries cover the key space; "
                          f"{len(problems)} coherence violations")


def prop_chain_header(ops: int) -> PropertyResult:
    try:
        sim, m = _sim(ops, mix=(0.5, 0.5, 0, 0), wire_check=True)
    except (WireError, SimError) as exc:
        return PropertyResult("chain-header", False, f"{type(exc).__name__}: {exc}")
    r = sim.directory.replication_factor
    bad = [s for s in m.samples if s.op == "put" and s.messages != r + 1]
    return PropertyResult("chain-header", not bad,
                          f"{sum(s.op == 'put' for s in m.samples)} PUTs, {len(bad)} with != {r + 1} messages")


def prop_counters(ops: int) -> PropertyResult:
    sim, m = _sim(ops, mix=(0.6, 0.3, 0.1, 0.0), seed=4, rebalance=False, epoch_ops=10 ** 9)
    report = sim.tors[0].read_and_reset_counters()
    reads = sum(r.reads for r in report.rows)
    writes = sum(r.writes for r in report.rows)
    gets = sum(s.op == "get" for s in m.samples)
    puts = sum(s.op in ("put", "del") for s in m.samples)
    ok = reads == gets and writes == puts and m.issued == m.completed + m.pending
    return PropertyResult("counter-conservation", ok,
                          f"reads {reads}/{gets}, writes {writes}/{puts}, issued {m.issued}")


def prop_consistency(ops: int) -> PropertyResult:
    sim, m = _sim(ops, seed=5)
    bad = sim.oracle_mismatches() + sim.store_mismatches()
    return PropertyResult("consistency-oracle", not bad and m.pending == 0,
                          f"{m.completed} ops, {len(bad)} mismatches")


def prop_failures(ops: int) -> PropertyResult:
    details, ok = [], True
    for mode in CoordinationMode:
        sim = Simulation(TopologySpec(mode=mode, wire_check=False, timeout=20e-3))
        stream = OpStream(WorkloadSpec(record_count=2_000, mix=(0.5, 0.5, 0, 0), seed=6))
        sim.preload(stream.load_phase())
        sim.attach(stream)
        chain = sim.directory[0].chain
        sim.call_at(0.1, lambda: sim.kill_node(chain.nodes[0].id))
        sim.call_at(0.3, lambda: sim.kill_node(chain.nodes[1].id))
        m = sim.run(ops)
        lost = sim.durability_violations()
        lengths = sim.chain_lengths()
        good = not lost and set(lengths) == {sim.directory.replication_factor} and m.pending == 0
        ok &= good
        details.append(f"{mode.value}: {len(lost)} lost writes, chain lengths {dict(lengths)}")
    return PropertyResult("failure-recovery", ok, "; ".join(details))


def prop_range_split(ops: int) -> PropertyResult:
    sim = Simulation(TopologySpec(wire_check=False))
    tor = sim.tors[0]
    rng = random.Random(7)
    bad = 0
    n = max(50, ops // 20)
    for i in range(n):
        a, b = sorted(rng.getrandbits(128) for _ in range(2))
        pkt = request_packet(OP_RANGE, a, sim.client_ips[0], 0, end_key=b, request_id=i, tos=TOS_RANGE)
        out = switch_mod.route_to_completion(tor, pkt)
        parts = [SubRange(p.kv.key, p.kv.end_key_or_hash) for port, p in out if port != RECIRCULATE]
        tails = all(sim.directory.locate(p.kv.key)[1].chain.tail.ip == p.ip.dst_ip for _, p in out)
        if not scan_cover(SubRange(a, b), parts) or not tails:
            bad += 1
    return PropertyResult("range-split", bad == 0, f"{n} random scans, {bad} bad covers")


PROPERTIES: tuple[Callable[[int], PropertyResult], ...] = (
    prop_coverage, prop_chain_header, prop_counters, prop_consistency, prop_failures,
    prop_range_split)


def run_audit(scale: str = "small", faults: tuple[str, ...] = ()) -> list[PropertyResult]:
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    unknown = set(faults) - set(KNOWN_FAULTS)
    if unknown:
        raise ValueError(f"unknown faults {sorted(unknown)}")
    ops = SCALES[scale]
    saved = set(switch_mod.FAULTS)
    switch_mod.FAULTS.clear()
    switch_mod.FAULTS.update(faults)
    try:
        return [prop(ops) for prop in PROPERTIES]
    finally:
        switch_mod.FAULTS.clear()
        switch_mod.FAULTS.update(saved)
