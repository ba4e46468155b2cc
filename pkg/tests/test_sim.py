import pytest
from conftest import scripted

from turbokv.keys import PartitionMode
from turbokv.sim import (CoordinationMode, RunMetrics, Simulation, TopologySpec, mean, percentile,
                         run_workload)
from turbokv.switch import AGG, TOR, UplinkEntry
from turbokv.workload import Op, OpStream, WorkloadSpec

MODES = list(CoordinationMode)


def run(mode=CoordinationMode.IN_SWITCH, ops=2000, mix=(0.5, 0.5, 0, 0), **topo):
    topo.setdefault("wire_check", False)
    return run_workload(TopologySpec(mode=mode, **topo),
                        WorkloadSpec(record_count=1000, mix=mix, seed=8), ops)


def test_single_rack_layout():
    sim = Simulation(TopologySpec())
    assert len(sim.tors) == 1 and len(sim.nodes) == 16 and len(sim.client_ips) == 4
    assert len(sim.directory) == 128
    assert set(sim.directory.role_counts().values()) == {(8, 8, 8)}
    assert len(sim.tors[0].range_table) == 128


def test_two_rack_agg_entries():
    sim = Simulation(TopologySpec(racks=2, nodes_per_rack=2, agg_switches=1, replication=2,
                                  num_records=8, clients=1))
    assert all(len({n.rack for n in rec.chain}) == 2 for rec in sim.directory)
    [agg] = sim.aggs
    assert agg.role == AGG and len(agg.range_table) == 8
    for entry, rec in zip(agg.range_table.entries, sim.directory):
        assert isinstance(entry, UplinkEntry) and entry.match == rec.subrange
        assert entry.port_toward_head == sim.port_toward(agg, ("n", rec.chain.head.id))
        assert entry.port_toward_tail == sim.port_toward(agg, ("n", rec.chain.tail.id))
        assert entry.port_toward_head >= 0 and entry.port_toward_tail >= 0
    for tor in sim.tors:
        assert tor.role == TOR and len(tor.range_table) == 8


def test_single_node_topology():
    sim, m = run(ops=200, nodes_per_rack=1, replication=1, num_records=1, clients=1)
    assert m.completed == 200
    [st] = sim.nodes.values()
    assert st.handled == 200


@pytest.mark.parametrize("mode", MODES)
def test_deterministic_trace(mode):
    a = run(mode, ops=1500)[1]
    b = run(mode, ops=1500)[1]
    assert a.trace_digest == b.trace_digest
    assert a.op_csv_lines() == b.op_csv_lines()


def test_different_seed_changes_trace():
    a = run(ops=500)[1]
    b = run_workload(TopologySpec(wire_check=False), WorkloadSpec(record_count=1000, seed=9,
                                                                  mix=(0.5, 0.5, 0, 0)), 500)[1]
    assert a.trace_digest != b.trace_digest


@pytest.mark.parametrize("mode", MODES)
def test_conservation_and_consistency(mode):
    sim, m = run(mode, ops=3000, mix=(0.5, 0.3, 0.1, 0.1))
    assert m.issued == m.completed + m.pending and m.pending == 0
    assert m.drops == 0 and m.lost == 0
    assert not sim.oracle_mismatches() and not sim.store_mismatches()


def test_in_switch_hops_and_messages():
    sim, m = run(ops=2000)
    assert {s.delivery_hops for s in m.samples} == {2}
    assert {s.messages for s in m.samples if s.op == "put"} == {4}
    assert {s.messages for s in m.samples if s.op == "get"} == {2}


def test_server_driven_hops():
    sim, m = run(CoordinationMode.SERVER_DRIVEN, ops=4000, mix=(1, 0, 0, 0))
    hops = [s.delivery_hops for s in m.samples]
    assert set(hops) == {2, 4}
    assert abs(mean(hops) - (2 + 2 * 15 / 16)) < 0.08


def test_client_driven_reads_are_direct():
    sim, m = run(CoordinationMode.CLIENT_DRIVEN_IDEAL, ops=1000, mix=(1, 0, 0, 0))
    assert {s.delivery_hops for s in m.samples} == {2}


def test_successor_lookups_per_put():
    r = 3
    for mode, per_put in ((CoordinationMode.CLIENT_DRIVEN_IDEAL, r - 1), (CoordinationMode.IN_SWITCH, 0)):
        sim = Simulation(TopologySpec(mode=mode, wire_check=False))
        sim.attach(OpStream(WorkloadSpec(record_count=100)))
        scripted(sim, [Op("put", k * 7919 << 100, b"v") for k in range(1, 51)])
        assert sum(st.lookups for st in sim.nodes.values()) == 50 * per_put


def test_hash_mode_runs_consistently():
    sim, m = run_workload(TopologySpec(partition=PartitionMode.HASH, wire_check=True),
                          WorkloadSpec(record_count=500, mix=(0.5, 0.4, 0.1, 0), seed=3,
                                       mode=PartitionMode.HASH), 1500)
    assert m.completed == 1500 and not sim.oracle_mismatches() and not sim.store_mismatches()


def test_multi_tier_topology():
    sim, m = run(ops=2000, racks=4, nodes_per_rack=4, agg_switches=2, core_switches=2,
                 mix=(0.4, 0.4, 0.1, 0.1))
    assert m.pending == 0 and not sim.oracle_mismatches()
    assert not sim.controller.coherence_violations()
    assert len(sim.cores) == 2 and len(sim.aggs) == 2


def test_wire_check_gives_identical_results():
    a = run(ops=800, wire_check=True)[1]
    b = run(ops=800, wire_check=False)[1]
    assert a.op_csv_lines() == b.op_csv_lines()


def test_window_raises_throughput():
    one = run(ops=3000, mix=(1, 0, 0, 0))[1]
    four = run(ops=3000, mix=(1, 0, 0, 0), window=4)[1]
    assert four.throughput > one.throughput


def test_topology_validation():
    with pytest.raises(ValueError):
        TopologySpec(racks=2)
    with pytest.raises(ValueError):
        TopologySpec(nodes_per_rack=2, replication=3)
    with pytest.raises(ValueError):
        TopologySpec(link_latency=-1)


def test_metrics_csv_and_stats():
    m = RunMetrics(CoordinationMode.IN_SWITCH)
    assert m.throughput == 0
    assert percentile([5, 1, 3, 2, 4], 50) == 3
    assert percentile([1, 2, 3, 4], 100) == 4
    sim, m = run(ops=100)
    line = m.summary_line().split(",")
    assert line[0] == "InSwitch" and float(line[1]) == pytest.approx(m.throughput, rel=1e-3)
    assert m.op_csv_lines()[0].count(",") == 4
