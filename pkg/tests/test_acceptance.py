"""End-to-end acceptance criteria, one test each, at their stated scales.

Every test prints a ``PASS``/``FAIL`` line (collected into the terminal
summary) as well as asserting.
"""

import random
from contextlib import contextmanager

import pytest
from conftest import ACCEPTANCE_LINES, any_packet, load_hex, scripted
from hypothesis import HealthCheck, given, settings

from turbokv import switch as switch_mod
from turbokv.keys import KEY_SPACE, SubRange
from turbokv.sim import CoordinationMode, Simulation, TopologySpec, mean, run_workload
from turbokv.switch import scan_cover
from turbokv.wire import ETH_LEN, OP_RANGE, TOS_RANGE, decode, encode, request_packet
from turbokv.workload import Op, OpStream, WorkloadSpec

IN, SD, CD = CoordinationMode.IN_SWITCH, CoordinationMode.SERVER_DRIVEN, CoordinationMode.CLIENT_DRIVEN_IDEAL
SKEWS = [("uniform", 0.99), ("zipf", 0.9), ("zipf", 0.95), ("zipf", 0.99), ("zipf", 1.2)]

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(number, name):
    details = []
    try:
        yield details
    except BaseException as exc:
        ACCEPTANCE_LINES.append(f"FAIL criterion {number} ({name}): {exc}".splitlines()[0])
        print(ACCEPTANCE_LINES[-1])
        raise
    ACCEPTANCE_LINES.append(f"PASS criterion {number} ({name}): {'; '.join(details)}")
    print(ACCEPTANCE_LINES[-1])


def test_c1_hop_counts():
    with criterion(1, "delivery hop counts") as notes:
        wl = WorkloadSpec(mix=(0.5, 0.5, 0, 0), seed=11)
        _, m = run_workload(TopologySpec(mode=IN), wl, 10_000)
        assert {s.delivery_hops for s in m.samples} == {2}
        _, m = run_workload(TopologySpec(mode=SD), wl, 10_000)
        hops = [s.delivery_hops for s in m.samples]
        assert set(hops) == {2, 4}
        expected = 2 + 2 * 15 / 16
        assert abs(mean(hops) - expected) <= 0.05, mean(hops)
        notes.append(f"InSwitch always 2; ServerDriven mean {mean(hops):.4f} vs {expected:.4f}")


def test_c2_chain_messages():
    with criterion(2, "chain message count") as notes:
        _, m = run_workload(TopologySpec(mode=IN), WorkloadSpec(mix=(0, 1, 0, 0), seed=12), 1000)
        puts = [s.messages for s in m.samples if s.op == "put"]
        assert len(puts) == 1000
        assert set(puts) == {4}, set(puts)
        assert 2 * 3 not in puts
        notes.append("1000 PUTs, every one 4 = r+1 messages, never 2r")


def test_c3_coordination_ordering():
    with criterion(3, "coordination throughput ordering") as notes:
        failures = []
        worst = {"read_sd": 9.0, "read_cd": 9.0, "write_cd": 9.0}
        for dist, theta in SKEWS:
            for mix in ((1, 0, 0, 0), (0.5, 0.5, 0, 0), (0, 1, 0, 0)):
                wl = WorkloadSpec(distribution=dist, theta=theta, mix=mix, seed=13)
                tput = {mode: run_workload(TopologySpec(mode=mode, wire_check=False), wl,
                                           100_000)[1].throughput for mode in (IN, SD, CD)}
                label = wl.label
                if mix[1] == 0:
                    worst["read_sd"] = min(worst["read_sd"], tput[IN] / tput[SD])
                    worst["read_cd"] = min(worst["read_cd"], tput[IN] / tput[CD])
                    if tput[IN] < 1.15 * tput[SD]:
                        failures.append(f"{label}: InSwitch/ServerDriven {tput[IN] / tput[SD]:.3f}")
                    if tput[IN] < 0.95 * tput[CD]:
                        failures.append(f"{label}: InSwitch/ClientDrivenIdeal {tput[IN] / tput[CD]:.3f}")
                else:
                    worst["write_cd"] = min(worst["write_cd"], tput[IN] / tput[CD])
                    if tput[IN] < tput[CD]:
                        failures.append(f"{label}: InSwitch below ClientDrivenIdeal")
        assert not failures, failures
        notes.append(f"min read InSwitch/ServerDriven {worst['read_sd']:.3f}, "
                     f"read InSwitch/ClientDrivenIdeal {worst['read_cd']:.3f}, "
                     f"write InSwitch/ClientDrivenIdeal {worst['write_cd']:.3f}")


def test_c4_consistency_oracle():
    with criterion(4, "consistency oracle") as notes:
        sim, m = run_workload(TopologySpec(mode=IN, window=4, wire_check=False),
                              WorkloadSpec(mix=(0.4, 0.4, 0.1, 0.1), range_span=16, seed=14), 100_000)
        assert m.completed == 100_000 and m.pending == 0
        gets = sim.oracle_mismatches()
        stores = sim.store_mismatches()
        assert not gets and not stores, (gets[:3], stores[:3])
        notes.append(f"{len(sim.ack_log)} acks replayed, 0 reply and 0 store mismatches")


def test_c5_fault_tolerance():
    with criterion(5, "fault tolerance") as notes:
        for mode in (IN, SD, CD):
            sim = Simulation(TopologySpec(mode=mode, timeout=20e-3))
            stream = OpStream(WorkloadSpec(record_count=5000, mix=(0.5, 0.5, 0, 0), seed=15))
            sim.preload(stream.load_phase())
            sim.attach(stream)
            victims = sim.directory[7].chain.nodes
            m1 = sim.run(3000)
            sim.kill_node(victims[0].id)
            m2 = sim.run(3000)
            assert not sim.durability_violations()
            sim.kill_node(victims[1].id)
            m3 = sim.run(4000)
            assert m3.pending == 0
            lost = sim.durability_violations()
            assert not lost, lost[:3]
            lengths = sim.chain_lengths()
            assert set(lengths) == {3}, lengths
            assert not any(v in rec.chain for rec in sim.directory for v in victims[:2])
            notes.append(f"{mode.value}: 0 lost writes, all {len(sim.directory)} chains length 3")


def test_c6_range_split():
    with criterion(6, "range split correctness") as notes:
        sim = Simulation(TopologySpec(wire_check=False))
        stream = OpStream(WorkloadSpec(record_count=4000, seed=16))
        sim.preload(stream.load_phase())
        sim.attach(stream)
        rng = random.Random(16)
        tor = sim.tors[0]
        queries = []
        for _ in range(1000):
            a = rng.randrange(KEY_SPACE)
            b = min(KEY_SPACE - 1, a + rng.randrange(KEY_SPACE // 16))
            queries.append((a, b))
        records = 0
        for i, (a, b) in enumerate(queries):
            pkt = request_packet(OP_RANGE, a, sim.client_ips[0], 0, end_key=b, request_id=i, tos=TOS_RANGE)
            out = switch_mod.route_to_completion(tor, pkt)
            parts = [SubRange(p.kv.key, p.kv.end_key_or_hash) for _, p in out]
            assert scan_cover(SubRange(a, b), parts)
            for part, (_, p) in zip(parts, out):
                idx, rec = sim.directory.locate(part.start)
                assert part.end <= rec.subrange.end
                assert p.ip.dst_ip == rec.chain.tail.ip
            records += len(parts)
        m = scripted(sim, [Op("range", a, end=b) for a, b in queries])
        assert m.completed == 1000
        bad = sim.oracle_mismatches()
        assert not bad, bad[:3]
        notes.append(f"1000 scans split into {records} sub-queries; exact covers, tails, oracle pairs")


def test_c7_load_balancing():
    with criterion(7, "load-balancing efficacy") as notes:
        wl = WorkloadSpec(distribution="zipf", theta=1.2, seed=17)
        ratios = {}
        for on in (False, True):
            sim, m = run_workload(TopologySpec(rebalance=on, wire_check=False, epoch_ops=10_000), wl, 50_000)
            assert len(m.epoch_loads) == 5
            last = m.epoch_loads[-1]
            ratios[on] = max(last.values()) / (sum(last.values()) / len(last))
            if on:
                checks = sim.controller.migration_checks
                assert checks and all(ok for _, ok in checks)
                jobs = len(checks)
        assert ratios[True] < ratios[False], ratios
        notes.append(f"max/mean after 5 epochs {ratios[False]:.3f} off vs {ratios[True]:.3f} on; "
                     f"{jobs} migrations preserved the pair multiset")


ROUND_TRIPS = []


@settings(max_examples=10_000, deadline=None, database=None,
          suppress_health_check=list(HealthCheck))
@given(any_packet)
def _round_trip(pkt):
    raw = encode(pkt)
    assert decode(raw) == pkt and decode(raw).ip.total_len == len(raw) - ETH_LEN
    ROUND_TRIPS.append(1)


def test_c8_wire_golden_vectors():
    with criterion(8, "wire format") as notes:
        from test_wire import golden_packets

        ROUND_TRIPS.clear()
        _round_trip()
        assert len(ROUND_TRIPS) >= 10_000
        for name, pkt in golden_packets().items():
            assert encode(pkt) == load_hex(name), name
            assert decode(load_hex(name)) == pkt, name
        notes.append(f"{len(ROUND_TRIPS)} random round trips and {len(golden_packets())} fixtures bit-exact")
